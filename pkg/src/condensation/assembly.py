"""Global approximate solution: the layered collar expansion near the
boundary blended with the dilated interior field, its residual in weighted
norms and the projection of the scaled residual on the principal
eigenfunction Z0."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .corrections import CorrectionSet, alpha_mu_exact, beta_mu_exact, theta_data
from .geometry import FermiChart, cartesian_to_fermi, chart_curvature, chart_laplacian, fermi_to_cartesian
from .harmonic import MatchingResult, solve_dirichlet
from .profile1d import SQRT2, EigenPair, bubble, principal_eigenpair
from .spectral import cumulative_integral, fd_derivative_uniform, fd_weights, fourier_derivative, fourier_interp_matrix
from . import reduced_ode

A_RANGE = (13.0 / 14.0, 1.0)


class AssemblyError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


# -- eps / lambda ------------------------------------------------------------

def lambda_of_eps(eps):
    eps = np.asarray(eps, dtype=float)
    return 4.0 / eps**2 * np.exp(-SQRT2 / eps)


EPS_MAX = 1.0 / SQRT2   # lambda(eps) increases on (0, EPS_MAX)


def eps_lambda_convert(lam: float | None = None, eps: float | None = None) -> float:
    """Return lambda for a given eps, or the eps solving ln(4/eps^2) - ln(lam) = sqrt2/eps.

    The relation is monotone on (0, 1/sqrt2); the root is bracketed there and
    polished by Newton.
    """
    if (lam is None) == (eps is None):
        raise ValueError("give exactly one of lam, eps")
    if eps is not None:
        if eps <= 0:
            raise ValueError("eps must be positive")
        return float(lambda_of_eps(eps))
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam >= 1:
        raise ValueError(f"lambda={lam} >= 1: no admissible eps (integrating the equation forces lambda < 1)")

    def g(e):
        return math.log(4.0) - 2.0 * math.log(e) - SQRT2 / e - math.log(lam)

    lo = 1e-4
    if g(lo) > 0:
        raise ValueError(f"lambda={lam:.3e} too small: eps below {lo}")
    e = brentq(g, lo, EPS_MAX, xtol=1e-15, rtol=1e-15)
    for _ in range(3):
        e -= g(e) / (-2.0 / e + SQRT2 / e**2)
    return float(e)


# -- parameters ----------------------------------------------------------------

@dataclass(frozen=True)
class AnsatzParams:
    eps: float
    lam: float
    a: float = 27.0 / 28.0
    sigma: float = 0.5
    e0: object = None               # None, a constant, samples on the curve grid, or callable(theta)
    M0: float | None = None
    allow_any_exponent: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        ref = float(lambda_of_eps(self.eps))
        if abs(self.lam - ref) > 1e-12 * ref:
            raise ValueError(f"lambda={self.lam!r} violates lambda = 4/eps^2 exp(-sqrt2/eps) = {ref!r}")
        lo, hi = A_RANGE
        if not (lo < self.a < hi) and not self.allow_any_exponent:
            raise ValueError(f"cutoff exponent a={self.a} must lie in (13/14, 1)")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")

    @classmethod
    def from_eps(cls, eps, **kw):
        return cls(eps=float(eps), lam=float(lambda_of_eps(eps)), **kw)

    @classmethod
    def from_lambda(cls, lam, **kw):
        eps = eps_lambda_convert(lam=lam)
        return cls(eps=eps, lam=float(lambda_of_eps(eps)), **kw)

    @property
    def delta(self):
        return self.eps**self.a

    @property
    def tau(self):
        return SQRT2 / self.eps

    def e0_samples(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.e0 is None:
            return np.zeros_like(theta)
        if callable(self.e0):
            return np.asarray(self.e0(theta), dtype=float)
        arr = np.asarray(self.e0, dtype=float)
        if arr.ndim == 0:
            return np.full_like(theta, float(arr))
        if arr.shape != theta.shape:
            raise ValueError("e0 samples must match the curve grid")
        return arr


def e0_norm(e0, ell, eps):
    """eps^2 |e0''| + eps |e0'| + |e0| for periodic samples."""
    e0 = np.asarray(e0, dtype=float)
    return float(eps**2 * np.max(np.abs(fourier_derivative(e0, ell, 2)))
                 + eps * np.max(np.abs(fourier_derivative(e0, ell, 1))) + np.max(np.abs(e0)))


# -- cutoff ------------------------------------------------------------------------

def _bump_half(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos])
    return out


def cutoff(y, delta):
    """Smooth eta with eta = 1 for |y| <= delta, 0 for |y| >= 2 delta."""
    x = np.abs(np.asarray(y, dtype=float)) / delta
    a, b = _bump_half(2.0 - x), _bump_half(x - 1.0)
    eta = a / (a + b)
    eta = np.where(x <= 1.0, 1.0, np.where(x >= 2.0, 0.0, eta))
    return eta


def cutoff_derivative_bounds(delta, n: int = 20001):
    """max |eta'| delta and max |eta''| delta^2 (constants independent of delta)."""
    y = -np.linspace(delta, 2 * delta, n)
    eta = cutoff(y, delta)
    h = abs(y[1] - y[0])
    d1 = np.gradient(eta, h)
    d2 = np.gradient(d1, h)
    return float(np.max(np.abs(d1)) * delta), float(np.max(np.abs(d2)) * delta**2)


# -- interpolation helpers -----------------------------------------------------------

def _rowwise_spline(t_desc, rows, t_min):
    """Quintic splines per theta row of samples on a descending t grid, restricted to [t_min, 0]."""
    n_keep = int(np.searchsorted(-t_desc, -t_min + 1e-12)) + 6
    n_keep = min(n_keep, t_desc.size)
    x = t_desc[:n_keep][::-1]
    return [make_interp_spline(x, r[:n_keep][::-1], k=5) for r in rows]


def _eval_rowwise(splines, tq):
    return np.stack([sp(tq[i]) for i, sp in enumerate(splines)])


def _lagrange_matrix(n, y0, h, yq, order: int = 8):
    """Dense (len(yq), n) matrix of local Lagrange interpolation from y0 + j h."""
    yq = np.asarray(yq, dtype=float)
    M = np.zeros((yq.size, n))
    pos = (yq - y0) / h
    start = np.clip(np.floor(pos).astype(int) - order // 2 + 1, 0, n - order)
    for i in range(yq.size):
        M[i, start[i]:start[i] + order] = fd_weights(pos[i] - start[i], np.arange(order, dtype=float), 0)[:, 0]
    return M


def _lagrange_uniform_rows(rows, y0, h, yq, order: int = 8):
    """Interpolate rows[i] (samples at y0 + j h) at yq[i] with local Lagrange stencils."""
    n = rows.shape[1]
    pos = (yq - y0) / h
    start = np.clip(np.floor(pos).astype(int) - order // 2 + 1, 0, n - order)
    out = np.empty(yq.size)
    for i in range(yq.size):
        w = fd_weights(pos[i] - start[i], np.arange(order, dtype=float), 0)[:, 0]
        out[i] = rows[i, start[i]:start[i] + order] @ w
    return out


def collar_expansion(curve, corrections: CorrectionSet, eigenpair: EigenPair, eps, lam, mu_hat, y, e0=None) -> dict:
    """Terms of u_lambda on the (theta, y) grid: bubble, alpha_mu, v_mu, beta_mu, z_mu and the Z0 carrier."""
    mu = eps * mu_hat
    t = y[None, :] / mu[:, None]
    td = theta_data(curve, mu_hat)
    lead = bubble(t)[0] - 2 * np.log(mu)[:, None] - math.log(lam)
    alpha = alpha_mu_exact(td, eps, y)
    t_min = float(t.min())
    v_spl = _rowwise_spline(corrections.t, corrections.v, t_min)
    z_spl = _rowwise_spline(corrections.t, corrections.z, t_min)

    def v_of_t(tq):
        return _eval_rowwise(v_spl, tq)

    v_mu = mu[:, None] * v_of_t(t)
    beta = beta_mu_exact(td, eps, y, v_of_t)
    z_mu = mu[:, None] ** 2 * _eval_rowwise(z_spl, t)
    e0 = np.zeros_like(mu) if e0 is None else np.asarray(e0, dtype=float)
    carrier = eps**1.5 * e0[:, None] * eigenpair.z0_at(t)
    return {"lead": lead, "alpha": alpha, "v": v_mu, "beta": beta, "z": z_mu, "e0": carrier}


# -- assembly --------------------------------------------------------------------------------

@dataclass
class AnsatzField:
    params: AnsatzParams
    curve: object
    chart: FermiChart
    theta: np.ndarray
    y: np.ndarray                   # collar offsets, 0 down to -2 delta
    mu: np.ndarray                  # eps * mu_hat on the theta grid
    mu_hat: np.ndarray
    collar: np.ndarray              # u_lambda on (theta, y)
    components: dict
    cutoff_collar: np.ndarray
    interior_collar: np.ndarray     # (sqrt2/eps) U_eps at collar points
    global_collar: np.ndarray       # blended field at collar points
    mesh: object
    interior: np.ndarray            # (sqrt2/eps) U_eps on mesh nodes
    global_field: np.ndarray        # blended field on mesh nodes
    cutoff: np.ndarray              # eta on mesh nodes
    matching: MatchingResult
    eigenpair: EigenPair
    e0: np.ndarray
    corrections: CorrectionSet | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.y[None, :] / self.mu[:, None]

    def collar_at(self, theta, y):
        """Interpolate u_lambda at arbitrary collar points (theta, y)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        E = fourier_interp_matrix(self.theta.size, self.curve.ell, theta)
        rows = E @ self.collar
        h = self.y[1] - self.y[0]
        return _lagrange_uniform_rows(rows, self.y[0], h, y)

    def evaluate(self, points):
        """Blended ansatz at arbitrary interior points (used as a Newton seed)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        delta = self.params.delta
        out = (SQRT2 / self.params.eps) * self.matching.field.evaluate(pts)
        # nearest boundary sample is a cheap upper bound on the distance
        d_est, _ = cKDTree(self.curve.points).query(pts)
        cand = np.flatnonzero(d_est < 2 * delta + self.curve.ell / self.curve.n)
        if cand.size:
            th, yy = cartesian_to_fermi(self.chart, pts[cand])
            yy = np.minimum(yy, 0.0)
            eta = cutoff(yy, delta)
            sel = eta > 0
            if np.any(sel):
                uc = self.collar_at(th[sel], yy[sel])
                idx = cand[sel]
                out[idx] = np.where(eta[sel] == 1.0, uc, eta[sel] * uc + (1 - eta[sel]) * out[idx])
        return out


def assemble(curve, matching: MatchingResult, corrections: CorrectionSet, params: AnsatzParams,
             eigenpair: EigenPair | None = None, mesh_shape: tuple | None = None,
             collar_step: float = 0.02, max_collar_points: int = 10**4, override: bool = False) -> AnsatzField:
    """Build u_lambda on the collar and the blended global field on the interior mesh."""
    if abs(matching.eps - params.eps) > 1e-14:
        raise AssemblyError(f"matching eps {matching.eps} differs from params eps {params.eps}")
    mu_hat = np.asarray(matching.mu_hat, dtype=float)
    if corrections.mu_hat.shape != mu_hat.shape or not np.allclose(corrections.mu_hat, mu_hat, rtol=1e-12, atol=0):
        raise AssemblyError("corrections were computed with a different mu_hat than the matching result")
    eigenpair = eigenpair or principal_eigenpair()
    eps, lam, delta = params.eps, params.lam, params.delta
    chart = FermiChart(curve, 2 * delta)
    theta = curve.theta
    mu = eps * mu_hat

    h = collar_step * float(mu.min())
    n_y = int(math.ceil(2 * delta / h)) + 1
    if n_y > max_collar_points and not override:
        raise ResolutionError(f"collar needs {n_y} offsets (2 delta / mu = {2 * delta / mu.min():.3g}); "
                              "pass override=True to proceed")
    y = -np.linspace(0.0, 2 * delta, n_y)
    t = y[None, :] / mu[:, None]
    if -t.min() > -corrections.t.min() - 1:
        raise ResolutionError("collar extends beyond the correction grid; increase the profile truncation T")

    e0 = params.e0_samples(theta)
    if params.M0 is not None:
        nrm = e0_norm(e0, curve.ell, eps)
        if nrm > params.M0:
            raise AssemblyError(f"||e0||_eps = {nrm:.4g} exceeds M0 = {params.M0}")
    comps = collar_expansion(curve, corrections, eigenpair, eps, lam, mu_hat, y, e0)
    u = sum(comps.values())

    # interior field, possibly re-solved on a finer mesh
    if mesh_shape is None:
        ifield = matching.field
    else:
        ifield = solve_dirichlet(curve, matching.dirichlet_data, *mesh_shape)
    mesh = ifield.mesh
    tau = SQRT2 / eps
    pts = fermi_to_cartesian(chart, np.repeat(theta, n_y), np.tile(y, theta.size))
    interior_c = tau * ifield.evaluate(pts).reshape(theta.size, n_y)
    eta_c = np.broadcast_to(cutoff(y, delta), u.shape)
    glob_c = np.where(eta_c == 1.0, u, np.where(eta_c == 0.0, interior_c, eta_c * u + (1 - eta_c) * interior_c))

    interior = tau * ifield.values
    dist = mesh.boundary_distance(max_distance=2 * delta * 1.5)
    eta_m = cutoff(-dist, delta)
    near = eta_m > 0
    u_near = np.zeros(mesh.n)
    if np.any(near):
        th_n, y_n = cartesian_to_fermi(chart, mesh.points[near])
        y_n = np.minimum(y_n, 0.0)
        E = fourier_interp_matrix(theta.size, curve.ell, th_n)
        rows = E @ u
        u_near[near] = _lagrange_uniform_rows(rows, y[0], y[1] - y[0], y_n)
    glob = np.where(eta_m == 1.0, u_near, np.where(eta_m == 0.0, interior, eta_m * u_near + (1 - eta_m) * interior))

    # Neumann defect at y = 0 from a one-sided stencil
    wts = fd_weights(0.0, y[:9], 1)[:, 1]
    neumann = float(np.max(np.abs(u[:, :9] @ wts)))
    d1, d2 = cutoff_derivative_bounds(delta)
    diag = {"neumann_defect": neumann, "n_offsets": n_y, "collar_depth_t": float(2 * delta / mu.min()),
            "cutoff_bounds": (d1, d2), "mesh_nodes_in_collar": int(np.sum(near))}
    return AnsatzField(params=params, curve=curve, chart=chart, theta=theta, y=y, mu=mu, mu_hat=mu_hat,
                       collar=u, components=comps, cutoff_collar=np.array(eta_c), interior_collar=interior_c,
                       global_collar=glob_c, mesh=mesh, interior=interior, global_field=glob, cutoff=eta_m,
                       matching=matching, eigenpair=eigenpair, e0=e0, corrections=corrections,
                       diagnostics=diag)


def matching_mismatch(field_: AnsatzField) -> dict:
    """Max of |u - (sqrt2/eps)U_eps| / (eps y^2 + y^4/eps) and of the analogous
    y-derivative ratio with (eps |y| + |y|^3/eps), over delta <= |y| <= 2 delta."""
    eps, delta = field_.params.eps, field_.params.delta
    y = field_.y
    sel = (np.abs(y) >= delta) & (np.abs(y) <= 2 * delta)
    diff = field_.collar - field_.interior_collar
    h = y[1] - y[0]
    ddiff = fd_derivative_uniform(diff, h, 1, order=6, axis=1)
    ay = np.abs(y[sel])
    r0 = np.abs(diff[:, sel]) / (eps * ay**2 + ay**4 / eps)
    r1 = np.abs(ddiff[:, sel]) / (eps * ay + ay**3 / eps)
    return {"value_ratio": float(r0.max()), "slope_ratio": float(r1.max()),
            "value_sup": float(np.abs(diff[:, sel]).max()), "slope_sup": float(np.abs(ddiff[:, sel]).max())}


# -- residual --------------------------------------------------------------------------------

@dataclass
class ResidualReport:
    eps: float
    lam: float
    sup_interior: float
    norm_star_star: float            # weighted norm of R minus the e0 carrier term
    norm_star_star_raw: float        # same for R itself
    c_proj: np.ndarray               # int R Z0 dt per theta
    c_proj_max: float
    R: np.ndarray
    R_tilde: np.ndarray
    t: np.ndarray
    z0_weight: np.ndarray            # int eta Z0^2 dt per theta

    def to_json(self) -> str:
        return json.dumps({"eps": self.eps, "lambda": self.lam, "sup_interior": self.sup_interior,
                           "norm_star_star": self.norm_star_star, "c_proj_max": self.c_proj_max})


def _collar_values_from_mesh(field_: AnsatzField, values):
    m = field_.mesh
    mu_min = float(field_.mu.min())
    dist = m.boundary_distance(max_distance=3 * field_.params.delta)
    n_in = len(np.unique(np.round(dist[dist < mu_min], 12)))
    if n_in < 6:
        raise ResolutionError(f"mesh has {n_in} radial levels within one layer width mu={mu_min:.3g} of the "
                              "boundary; need >= 6 (increase n_s)")
    pts = fermi_to_cartesian(field_.chart, np.repeat(field_.theta, field_.y.size),
                             np.tile(field_.y, field_.theta.size))
    return m.evaluate(values, pts).reshape(field_.theta.size, field_.y.size)


def residual(field_: AnsatzField, values=None, order: int = 4) -> ResidualReport:
    """Scaled residual R = mu^2 (Delta U - U + lambda e^U) on the collar and
    the physical residual sup on the mesh nodes outside the 2 delta collar.

    With ``values`` (mesh node values of another global field) the collar
    samples are interpolated from the mesh and the interior residual uses
    those values; otherwise the ansatz's own collar composition is used.
    """
    p = field_.params
    eps, lam, delta, sigma = p.eps, p.lam, p.delta, p.sigma
    if values is None:
        Uc = field_.global_collar
    else:
        Uc = _collar_values_from_mesh(field_, values)
    lap = chart_laplacian(field_.chart, field_.theta, field_.y, Uc, order=order)
    mu2 = field_.mu[:, None] ** 2
    R = mu2 * (lap - Uc + lam * np.exp(Uc))
    t = field_.t
    z0 = field_.eigenpair.z0_at(t)
    e0 = field_.e0
    e0_eps = eps**1.5 * e0
    e0_dd = fourier_derivative(e0_eps, field_.curve.ell, 2)
    mu_hat0 = field_.mu_hat
    carrier = field_.cutoff_collar * ((eps**2 * mu_hat0**2 * e0_dd + field_.eigenpair.lambda1 * e0_eps)[:, None] * z0)
    Rt = R - carrier
    weight = 1 + np.abs(t) ** (sigma + 2)
    nss = float(np.max(weight * np.abs(Rt)))
    nss_raw = float(np.max(weight * np.abs(R)))
    c = project_Z0(R, field_)
    zw = np.array([-cumulative_integral(field_.cutoff_collar[i] * z0[i] ** 2, t[i])[-1] for i in range(t.shape[0])])

    m = field_.mesh
    dist = m.boundary_distance(max_distance=3 * delta)
    outside = dist > 2 * delta
    if values is None:
        # outside the collar U = tau U_eps; apply the operator to the smooth
        # interior field, whose spectral derivatives are not polluted by the layer
        Ui = field_.interior
    else:
        Ui = np.asarray(values, dtype=float)
    S = -(m.laplacian @ Ui) + Ui - lam * np.exp(Ui)
    sup_int = float(np.max(np.abs(S[outside]))) if np.any(outside) else float("nan")
    return ResidualReport(eps=eps, lam=lam, sup_interior=sup_int, norm_star_star=nss, norm_star_star_raw=nss_raw,
                          c_proj=c, c_proj_max=float(np.max(np.abs(c))), R=R, R_tilde=Rt, t=t, z0_weight=zw)


def project_Z0(R, field_: AnsatzField):
    """c(theta) = int_{-2 delta/mu}^0 R Z0 dt, by high-order quadrature in t per theta row."""
    t = field_.t
    z0 = field_.eigenpair.z0_at(t)
    return np.array([-cumulative_integral(R[i] * z0[i], t[i])[-1] for i in range(t.shape[0])])


# -- e0 update -----------------------------------------------------------------------------------

@dataclass
class E0Update:
    e0: np.ndarray
    norm_eps: float
    forcing: np.ndarray
    solution: object
    c_before: float
    c_after: float | None = None

    @property
    def reduction(self):
        return None if self.c_after is None else self.c_before / self.c_after


def solve_e0(problem: "reduced_ode.ReducedProblem", c_proj, field_: AnsatzField, report: ResidualReport | None = None,
             c0: float = reduced_ode.DEFAULT_GAP_CONSTANT) -> E0Update:
    """One Picard sweep for e0: with e0^eps = eps^{3/2} e0, inserting e0 changes the
    projection by eps^{3/2} J (eps^2 mu0^2 e0'' + Lambda1 e0), J = int eta Z0^2 dt,
    so the update solves eps^2 e0'' + (Lambda1/mu0^2) e0 = -c / (eps^{3/2} J mu0^2)."""
    eps = field_.params.eps
    c_proj = np.asarray(c_proj, dtype=float)
    J = report.z0_weight if report is not None else None
    if J is None:

        t = field_.t
        z0 = field_.eigenpair.z0_at(t)
        J = np.array([-cumulative_integral(field_.cutoff_collar[i] * z0[i] ** 2, t[i])[-1] for i in range(t.shape[0])])
    mu0_sq = field_.eigenpair.lambda1 / problem.p0
    f = -c_proj / (eps**1.5 * J * mu0_sq)
    if not np.any(f):
        zero = np.zeros_like(f)
        return E0Update(e0=zero, norm_eps=0.0, forcing=f, solution=None, c_before=float(np.max(np.abs(c_proj))))
    sol = reduced_ode.solve_reduced(problem, eps, f, c0=c0)
    return E0Update(e0=sol.x, norm_eps=sol.norm_eps, forcing=f, solution=sol,
                    c_before=float(np.max(np.abs(c_proj))))


def e0_sweep(curve, matching, corrections, params: AnsatzParams, eigenpair=None, mu_hat0=None, **kw) -> tuple:
    """Assemble with e0 = 0, update e0 once, reassemble; returns (update, field_before, field_after)."""
    from dataclasses import replace

    eigenpair = eigenpair or principal_eigenpair()
    f0 = assemble(curve, matching, corrections, replace(params, e0=None), eigenpair, **kw)
    r0 = residual(f0)
    if mu_hat0 is None:
        from .harmonic import mu_hat_0

        mu_hat0 = mu_hat_0(curve)
    prob = reduced_ode.build_reduced(curve, eigenpair, mu_hat0)
    upd = solve_e0(prob, r0.c_proj, f0, r0)
    f1 = assemble(curve, matching, corrections, replace(params, e0=upd.e0), eigenpair, **kw)
    r1 = residual(f1)
    upd.c_after = r1.c_proj_max
    return upd, f0, f1


# -- integrals over the domain ------------------------------------------------------------------

def layer_integral(curve, mesh, collar_values: Callable, mesh_values, depth: float | None = None,
                   step: float = 0.002, weight=None) -> float:
    """Integral over the domain of a function with a boundary layer.

    A smooth partition psi(y) (1 on |y| <= depth/2, 0 beyond depth) splits
    the integral: psi * f on a fine Fermi grid (``collar_values(theta, y)``
    returns samples on that grid), (1 - psi) * f by the mesh quadrature
    (``mesh_values`` are node values of f). ``weight`` is an optional
    function multiplied in (given as (theta, y)-grid samples callable and
    node values pair).
    """

    kmax = float(np.max(np.abs(curve.kappa)))
    if depth is None:
        depth = 0.45 / max(kmax, 1e-12)
        depth = min(depth, 0.45 * float(np.min(curve.rho_phi)))
    chart = FermiChart(curve, depth)
    n_y = int(math.ceil(depth / step)) + 1
    y = -np.linspace(0.0, depth, n_y)
    vals = collar_values(chart, curve.theta, y)
    k = chart_curvature(curve)[:, None]
    psi = cutoff(y, depth / 2)[None, :]
    integrand = vals * psi * (1 - y[None, :] * k)
    inner = np.array([-cumulative_integral(integrand[i], y)[-1] for i in range(curve.n)])
    collar_part = float(np.mean(inner) * curve.ell)
    dist = mesh.boundary_distance(max_distance=depth * 1.2)
    psi_m = cutoff(-dist, depth / 2)
    mesh_part = mesh.integrate((1 - psi_m) * np.asarray(mesh_values))
    return collar_part + mesh_part


def ansatz_mass(field_: AnsatzField, layer_step: float = 0.02) -> dict:
    """Masses int lambda e^U: of the blended field over the 2 delta collar
    ("collar") and over the domain ("total"), and of the collar expansion
    u_lambda alone continued across the whole chart depth ("layer").
    "limit" is sqrt2 * int 1/mu_hat dtheta with the matched mu_hat."""

    p = field_.params
    lam, eps, delta = p.lam, p.eps, p.delta
    curve = field_.curve
    k = chart_curvature(curve)[:, None]

    def collar_integral(vals, y):
        integrand = vals * (1 - y[None, :] * k)
        inner = np.array([-cumulative_integral(integrand[i], y)[-1] for i in range(vals.shape[0])])
        return float(np.mean(inner) * curve.ell)

    collar = collar_integral(lam * np.exp(field_.global_collar), field_.y)
    mesh = field_.mesh
    tau = SQRT2 / eps
    U_eps = field_.interior / tau
    depth = min(0.45 / max(float(np.max(np.abs(curve.kappa))), 1e-12), 0.45 * float(np.min(curve.rho_phi)))
    y_layer = -np.linspace(0.0, depth, int(math.ceil(depth / (layer_step * float(field_.mu.min())))) + 1)
    layer = float("nan")
    if field_.corrections is not None:
        comps = collar_expansion(curve, field_.corrections, field_.eigenpair, eps, lam, field_.mu_hat, y_layer,
                                 field_.e0)
        layer = collar_integral(lam * np.exp(sum(comps.values())), y_layer)

    def collar_values(chart, theta, y):
        pts = fermi_to_cartesian(chart, np.repeat(theta, y.size), np.tile(y, theta.size))
        interior = tau * mesh.evaluate(U_eps, pts).reshape(theta.size, y.size)
        eta = np.broadcast_to(cutoff(y, delta)[None, :], interior.shape)
        inside = np.abs(y) <= 2 * delta
        u = np.zeros_like(interior)
        L = _lagrange_matrix(field_.y.size, field_.y[0], field_.y[1] - field_.y[0], y[inside])
        u[:, inside] = field_.collar @ L.T
        blend = np.where(eta == 1.0, u, np.where(eta == 0.0, interior, eta * u + (1 - eta) * interior))
        return lam * np.exp(blend)

    total = layer_integral(curve, mesh, collar_values, lam * np.exp(field_.global_field), depth=depth)
    return {"collar": collar, "total": total, "layer": layer, "eps_layer": eps * layer,
            "eps_total": eps * total, "limit": SQRT2 * float(np.mean(1.0 / field_.mu_hat) * curve.ell)}
