"""Modified Helmholtz problems -Delta U + U = 0 on star-shaped domains,
the Dirichlet-to-Neumann map and the boundary matching for mu_hat.

Discretization: Fourier in the polar angle phi times Chebyshev in a radial
coordinate s in (0, 1]. The physical point is
    X(s, phi) = r(s, phi) (cos phi, sin phi),  r = s rho_e(phi) + s^2 rho_o(phi),
with rho_e, rho_o the parts of rho that are even/odd under phi -> phi + pi.
This map satisfies X(-s, phi + pi) = X(s, phi), so a function sampled on
s in (0, 1] extends smoothly to the full Chebyshev line [-1, 1]; only the
positive half of an odd-size Chebyshev grid is stored and the origin is
never a node. On a disk the map reduces to r = R s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .geometry import BoundaryCurve, chart_curvature
from .spectral import cheb, fourier_diff_matrix, fourier_interp_matrix


class MatchingError(RuntimeError):
    pass


def _barycentric_matrix(nodes, weights, targets):
    """Barycentric interpolation matrix from ``nodes`` to ``targets``."""
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    diff = targets[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0)
    diff[exact] = 1.0
    terms = weights[None, :] / diff
    mat = terms / terms.sum(axis=1, keepdims=True)
    rows = np.where(exact.any(axis=1))[0]
    for r in rows:
        mat[r] = 0.0
        mat[r, np.argmax(exact[r])] = 1.0
    return mat


class SpectralMesh:
    """Boundary-fitted Fourier x folded-Chebyshev collocation mesh.

    Unknowns are ordered s-major: index = i_s * n_phi + k, with i_s = 0 the
    boundary ring (s = 1).
    """

    def __init__(self, curve: BoundaryCurve, n_phi: int = 64, n_s: int = 16):
        if n_phi % 2:
            raise ValueError("n_phi must be even (the fold pairs phi with phi + pi)")
        self.curve = curve
        self.n_phi = n_phi
        self.n_s = n_s
        self.n = n_phi * n_s
        N = 2 * n_s - 1
        D, x = cheb(N)
        self.cheb_nodes = x
        self.s = x[:n_s]
        self.phi = 2 * np.pi * np.arange(n_phi) / n_phi
        half = n_phi // 2
        self.shift = np.roll(np.eye(n_phi), half, axis=1)  # (P v)_k = v_{k + n/2}
        D2 = D @ D
        mirror = np.arange(N, N - n_s, -1)
        self._A, self._B = D[:n_s, :n_s], D[:n_s, mirror]
        self._A2, self._B2 = D2[:n_s, :n_s], D2[:n_s, mirror]
        self._Dp = fourier_diff_matrix(n_phi, 2 * np.pi, 1)
        self._Dp2 = fourier_diff_matrix(n_phi, 2 * np.pi, 2)

        ph = self.phi
        rho = curve.rho(ph)
        rho_pi = curve.rho(ph + np.pi)
        d1 = curve.rho(ph, 1)
        d1_pi = curve.rho(ph + np.pi, 1)
        d2 = curve.rho(ph, 2)
        d2_pi = curve.rho(ph + np.pi, 2)
        self.rho_e, self.rho_o = 0.5 * (rho + rho_pi), 0.5 * (rho - rho_pi)
        re1, ro1 = 0.5 * (d1 + d1_pi), 0.5 * (d1 - d1_pi)
        re2, ro2 = 0.5 * (d2 + d2_pi), 0.5 * (d2 - d2_pi)
        if np.min(self.rho_e - 2 * np.abs(self.rho_o)) <= 0:
            raise ValueError("radial map is not monotone; domain too far from a centred disk")

        S = self.s[:, None]
        r = S * self.rho_e + S**2 * self.rho_o
        r_s = self.rho_e + 2 * S * self.rho_o
        r_ss = 2 * self.rho_o + 0 * S
        r_p = S * re1 + S**2 * ro1
        r_sp = re1 + 2 * S * ro1
        r_pp = S * re2 + S**2 * ro2
        g = r_p / r_s
        g_s = (r_sp * r_s - r_p * r_ss) / r_s**2
        g_p = (r_pp * r_s - r_p * r_sp) / r_s**2
        self.r, self.r_s, self.g = r, r_s, g
        self._c_ss = (1 / r_s**2 + g**2 / r**2).ravel()
        self._c_sp = (-2 * g / r**2).ravel()
        self._c_pp = (1 / r**2).ravel()
        self._c_s = (-r_ss / r_s**3 + 1 / (r * r_s) + (g * g_s - g_p) / r**2).ravel()
        cos, sin = np.cos(ph), np.sin(ph)
        self.points = np.stack([(r * cos).ravel(), (r * sin).ravel()], axis=1)

        # inner normal on the boundary ring
        tx = d1 * cos - rho * sin
        ty = d1 * sin + rho * cos
        nrm = np.hypot(tx, ty)
        self.boundary_normal = np.stack([-ty / nrm, tx / nrm], axis=1)
        self._cache: dict = {}

    # -- operators -------------------------------------------------------
    def _kron_s(self, A, B, right):
        return np.kron(A, right) + np.kron(B, self.shift @ right)

    @property
    def d_s(self):
        if "ds" not in self._cache:
            I = np.eye(self.n_phi)
            self._cache["ds"] = self._kron_s(self._A, self._B, I)
        return self._cache["ds"]

    @property
    def d_phi(self):
        if "dp" not in self._cache:
            self._cache["dp"] = np.kron(np.eye(self.n_s), self._Dp)
        return self._cache["dp"]

    @property
    def laplacian(self):
        if "lap" not in self._cache:
            I = np.eye(self.n_phi)
            dss = self._kron_s(self._A2, self._B2, I)
            dsp = self._kron_s(self._A, self._B, self._Dp)
            dpp = np.kron(np.eye(self.n_s), self._Dp2)
            lap = (self._c_ss[:, None] * dss + self._c_sp[:, None] * dsp
                   + self._c_pp[:, None] * dpp + self._c_s[:, None] * self.d_s)
            self._cache["lap"] = lap
        return self._cache["lap"]

    @property
    def gradient(self):
        """(Dx, Dy) dense matrices."""
        if "grad" not in self._cache:
            cos = np.broadcast_to(np.cos(self.phi), self.r.shape).ravel()
            sin = np.broadcast_to(np.sin(self.phi), self.r.shape).ravel()
            r, r_s, g = self.r.ravel(), self.r_s.ravel(), self.g.ravel()
            # grad = (v_s / r_s) e_r + ((v_phi - g v_s) / r) e_phi
            ds, dp = self.d_s, self.d_phi
            radial = ds / r_s[:, None]
            angular = (dp - g[:, None] * ds) / r[:, None]
            dx = cos[:, None] * radial - sin[:, None] * angular
            dy = sin[:, None] * radial + cos[:, None] * angular
            self._cache["grad"] = (dx, dy)
        return self._cache["grad"]

    @property
    def boundary_slice(self):
        return slice(0, self.n_phi)

    @property
    def normal_rows(self):
        """Rows computing the inner normal derivative on the boundary ring."""
        if "nrows" not in self._cache:
            dx, dy = self.gradient
            b = self.boundary_slice
            nu = self.boundary_normal
            self._cache["nrows"] = nu[:, 0:1] * dx[b] + nu[:, 1:2] * dy[b]
        return self._cache["nrows"]

    # -- interpolation and quadrature -------------------------------------
    def to_grid(self, values):
        return np.asarray(values).reshape(self.n_s, self.n_phi)

    def _full_line(self, values, phi_targets):
        """Values on the full Chebyshev line for each target angle: (n_t, 2 n_s)."""
        v = self.to_grid(values)
        E = fourier_interp_matrix(self.n_phi, 2 * np.pi, phi_targets)
        Epi = fourier_interp_matrix(self.n_phi, 2 * np.pi, np.asarray(phi_targets) + np.pi)
        pos = E @ v.T            # (n_t, n_s): s_j at phi
        neg = Epi @ v.T          # s_j at phi + pi, i.e. node -s_j
        return np.concatenate([pos, neg[:, ::-1]], axis=1)

    def s_of_point(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
        r = np.hypot(pts[:, 0], pts[:, 1])
        re = self.curve.rho(phi) * 0.5 + self.curve.rho(phi + np.pi) * 0.5
        ro = self.curve.rho(phi) * 0.5 - self.curve.rho(phi + np.pi) * 0.5
        s = 2 * r / (re + np.sqrt(re**2 + 4 * ro * r))
        return s, phi

    def evaluate(self, values, points, chunk: int = 2048):
        """Spectral interpolation of mesh values at physical points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s, phi = self.s_of_point(pts)
        N = 2 * self.n_s - 1
        w = (-1.0) ** np.arange(N + 1)
        w[0] *= 0.5
        w[-1] *= 0.5
        out = np.empty(s.size)
        for a in range(0, s.size, chunk):
            b = min(a + chunk, s.size)
            full = self._full_line(values, phi[a:b])
            out[a:b] = np.sum(_barycentric_matrix(self.cheb_nodes, w, s[a:b]) * full, axis=1)
        return out.reshape(np.asarray(points).shape[:-1])

    @property
    def quadrature_weights(self):
        """Weights W with sum(W * f) ~ integral of f over the domain."""
        if "quad" not in self._cache:
            N = 2 * self.n_s - 1
            nq = N + 1
            xq, wq = np.polynomial.legendre.leggauss(nq)
            sq = 0.5 * (xq + 1)
            wq = 0.5 * wq
            bw = (-1.0) ** np.arange(N + 1)
            bw[0] *= 0.5
            bw[-1] *= 0.5
            B = _barycentric_matrix(self.cheb_nodes, bw, sq)  # (nq, N+1)
            W = np.zeros((self.n_s, self.n_phi))
            dphi = 2 * np.pi / self.n_phi
            half = self.n_phi // 2
            for k in range(self.n_phi):
                area = (sq * self.rho_e[k] + sq**2 * self.rho_o[k]) * (self.rho_e[k] + 2 * sq * self.rho_o[k])
                coef = (wq * area) @ B * dphi   # weights on the full line for column k
                W[:, k] += coef[:self.n_s]
                W[:, (k + half) % self.n_phi] += coef[self.n_s:][::-1]
            self._cache["quad"] = W.ravel()
        return self._cache["quad"]

    def integrate(self, values):
        return float(np.dot(self.quadrature_weights, np.asarray(values).ravel()))

    def boundary_distance(self, max_distance: float | None = None):
        """Distance of every node to the boundary (exact for disks)."""
        if self.curve.kind == "disk":
            R = self.curve.rho_phi[0]
            return R - np.hypot(self.points[:, 0], self.points[:, 1])
        from .geometry import FermiChart, cartesian_to_fermi

        d = np.min(np.linalg.norm(self.points[:, None, :] - self.curve.points[None, :, :], axis=2), axis=1)
        limit = max_distance if max_distance is not None else 0.45 / np.max(np.abs(self.curve.kappa))
        sel = d < limit
        if np.any(sel):
            chart = FermiChart(self.curve, min(limit, 0.49 / np.max(np.abs(self.curve.kappa))))
            _, y = cartesian_to_fermi(chart, self.points[sel])
            d[sel] = -y
        return d

    # -- boundary transfer -----------------------------------------------
    @property
    def theta_to_phi(self):
        """Matrix mapping arclength-grid samples to the boundary ring."""
        if "t2p" not in self._cache:
            th = self.curve.theta_of_phi(self.phi)
            self._cache["t2p"] = fourier_interp_matrix(self.curve.n, self.curve.ell, th)
        return self._cache["t2p"]

    @property
    def phi_to_theta(self):
        if "p2t" not in self._cache:
            self._cache["p2t"] = fourier_interp_matrix(self.n_phi, 2 * np.pi, self.curve.phi)
        return self._cache["p2t"]


@dataclass
class InteriorField:
    mesh: SpectralMesh
    values: np.ndarray
    boundary_trace: np.ndarray      # on the curve's arclength grid
    normal_derivative: np.ndarray   # inner normal derivative, arclength grid
    pde_residual: float = 0.0

    def evaluate(self, points):
        return self.mesh.evaluate(self.values, points)


class HelmholtzSolver:
    """Factorized Dirichlet problem -Delta U + U = 0 on a fixed mesh."""

    def __init__(self, mesh: SpectralMesh):
        self.mesh = mesh
        K = -mesh.laplacian + np.eye(mesh.n)
        b = mesh.boundary_slice
        K[b] = 0.0
        K[b, b] = np.eye(mesh.n_phi)
        # row equilibration: the 1/r^2 rows near the origin otherwise
        # dominate the rounding error of the factorization
        self._row_scale = 1.0 / np.max(np.abs(K), axis=1)
        self._K = K
        self._lu = sla.lu_factor(self._row_scale[:, None] * K)
        self._dtn = None

    def solve_ring(self, g_phi):
        rhs = np.zeros(self.mesh.n)
        rhs[self.mesh.boundary_slice] = g_phi
        return sla.lu_solve(self._lu, self._row_scale * rhs)

    @property
    def dtn_phi(self):
        if self._dtn is None:
            m = self.mesh
            E = np.zeros((m.n, m.n_phi))
            E[m.boundary_slice] = np.eye(m.n_phi)
            X = sla.lu_solve(self._lu, self._row_scale[:, None] * E)
            self._dtn = m.normal_rows @ X
        return self._dtn

    @property
    def dtn_theta(self):
        m = self.mesh
        return m.phi_to_theta @ self.dtn_phi @ m.theta_to_phi


_SOLVERS: dict = {}


def helmholtz_solver(curve: BoundaryCurve, n_phi: int = 64, n_s: int = 16) -> HelmholtzSolver:
    key = (id(curve), n_phi, n_s)
    if key not in _SOLVERS:
        _SOLVERS[key] = (curve, HelmholtzSolver(SpectralMesh(curve, n_phi, n_s)))
    return _SOLVERS[key][1]


def solve_dirichlet(curve: BoundaryCurve, g, n_phi: int = 64, n_s: int = 16) -> InteriorField:
    """Solve -Delta U + U = 0 with U = g on the boundary (g on the arclength grid)."""
    solver = helmholtz_solver(curve, n_phi, n_s)
    m = solver.mesh
    g = np.broadcast_to(np.asarray(g, dtype=float), curve.theta.shape)
    U = solver.solve_ring(m.theta_to_phi @ g)
    resid = (-m.laplacian @ U + U)
    interior = np.ones(m.n, bool)
    interior[m.boundary_slice] = False
    dn = m.phi_to_theta @ (m.normal_rows @ U)
    return InteriorField(mesh=m, values=U, boundary_trace=m.phi_to_theta @ U[m.boundary_slice],
                         normal_derivative=dn, pde_residual=float(np.max(np.abs(resid[interior]))))


def dtn(curve: BoundaryCurve, g, n_phi: int = 64, n_s: int = 16):
    """Inner normal derivative of the solution with boundary values g."""
    return helmholtz_solver(curve, n_phi, n_s).dtn_theta @ np.asarray(g, dtype=float)


def mu_hat_0(curve: BoundaryCurve, n_phi: int = 64, n_s: int = 16):
    """Leading concentration function -1 / (inner normal derivative of U0)."""
    dn = solve_dirichlet(curve, np.ones(curve.n), n_phi, n_s).normal_derivative
    if np.any(dn >= 0):
        raise MatchingError(
            f"normal derivative of U0 is nonnegative somewhere (max {dn.max():.3e}); "
            "this contradicts the Hopf lemma and signals a sign or solver error"
        )
    return -1.0 / dn


@dataclass
class MatchingResult:
    eps: float
    mu_hat: np.ndarray
    field: InteriorField
    residual: float
    iterations: int
    residual_history: list
    variant: str
    nu2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    dirichlet_data: np.ndarray
    neumann_data: np.ndarray
    extras: dict = field(default_factory=dict)


MATCHING_VARIANTS = ("published", "rederived")


def _boundary_data(curve, eps, mu, nu2, zeta1, zeta2, variant):
    k = chart_curvature(curve)
    c = eps / np.sqrt(2.0)
    g = 1 - c * (np.log(mu**2) - eps * mu * nu2 - eps**2 * mu**2 * zeta2)
    bracket = 2 * k + mu * np.log(4.0) + eps * mu * zeta1
    sign = 1.0 if variant == "published" else -1.0
    n = -1.0 / mu + sign * c * bracket
    return g, n


def matching_residual(curve, eps, mu_hat, hooks, variant="published", n_phi=64, n_s=16):
    nu2, zeta1, zeta2 = hooks(mu_hat)
    g, nd = _boundary_data(curve, eps, mu_hat, nu2, zeta1, zeta2, variant)
    return dtn(curve, g, n_phi, n_s) - nd


def fourier_basis(curve: BoundaryCurve, n_modes: int):
    """Real Fourier basis on the arclength grid: columns 1, cos(k w theta), sin(k w theta)."""
    w = 2 * np.pi / curve.ell
    cols = [np.ones(curve.n)]
    for k in range(1, n_modes + 1):
        cols += [np.cos(k * w * curve.theta), np.sin(k * w * curve.theta)]
    B = np.stack(cols, axis=1)
    # least-squares projector; the columns are orthogonal on the uniform grid
    P = B.T / np.sum(B**2, axis=0)[:, None]
    return B, P


def solve_matching(curve: BoundaryCurve, eps: float, hooks, variant: str = "published",
                   tol: float = 1e-10, max_iter: int = 25, mu_init=None, rel_step: float = 1e-6,
                   n_modes: int = 6, jacobian: str = "newton",
                   n_phi: int = 64, n_s: int = 16) -> MatchingResult:
    """Newton iteration for H(eps, mu_hat) = F(g(mu_hat)) - N(mu_hat) = 0.

    g is the Dirichlet datum, N the target normal derivative and F the
    Dirichlet-to-Neumann map on the arclength grid. The corrections nu2,
    zeta1, zeta2 supplied by ``hooks(mu_hat)`` are recomputed at every
    iterate.

    The corrections contain second theta-derivatives of mu_hat, so the
    linearization of H grows like k^2 on Fourier mode k and changes sign at
    a moderate k (about 8 at eps = 0.1). mu_hat is therefore sought in the
    span of the first ``n_modes`` Fourier modes and H is projected onto the
    same span (Galerkin). The Jacobian is a finite difference in those
    coefficients, refreshed every step (``jacobian="newton"``) or taken
    once and reused (``"chord"``, refreshed only when the residual stops
    dropping by a factor 4).

    ``variant="published"`` uses the boundary data as displayed; "rederived"
    flips the sign of the eps-correction in the Neumann datum, which is the
    sign obtained when both the value and the slope are expanded at the
    same end of the layer.
    """
    if variant not in MATCHING_VARIANTS:
        raise ValueError(f"variant must be one of {MATCHING_VARIANTS}")
    if jacobian not in ("newton", "chord"):
        raise ValueError("jacobian must be 'newton' or 'chord'")
    solver = helmholtz_solver(curve, n_phi, n_s)
    F = solver.dtn_theta
    B, P = fourier_basis(curve, n_modes)
    mu_start = np.array(mu_hat_0(curve, n_phi, n_s) if mu_init is None else mu_init, dtype=float)
    coef = P @ mu_start

    def evaluate(c):
        mu = B @ c
        if np.any(mu <= 0):
            return mu, None, None, None
        corr = hooks(mu)
        g, nd = _boundary_data(curve, eps, mu, *corr, variant)
        return mu, g, F @ g - nd, corr

    def coefficient_jacobian(c, Hc):
        h = rel_step * max(abs(c[0]), 1.0)
        J = np.empty((c.size, c.size))
        for j in range(c.size):
            cp = c.copy()
            cp[j] += h
            J[:, j] = (P @ evaluate(cp)[2] - Hc) / h
        return J

    history, jac_refreshes = [], 0
    mu, g, H, corr = evaluate(coef)
    if H is None:
        raise MatchingError("initial mu_hat is not positive")
    J = None
    it = 0
    while True:
        if np.any(g <= 0):
            raise MatchingError(f"Dirichlet datum lost positivity at eps={eps} (min {g.min():.3e})")
        Hc = P @ H
        res = float(np.max(np.abs(B @ Hc)))
        history.append(res)
        if res < tol or it >= max_iter:
            break
        if J is None or jacobian == "newton" or (len(history) > 1 and res > 0.25 * history[-2]):
            J = coefficient_jacobian(coef, Hc)
            jac_refreshes += 1
        step = np.linalg.solve(J, -Hc)
        lam = 1.0
        while True:
            trial = evaluate(coef + lam * step)
            if trial[2] is not None and np.max(np.abs(B @ (P @ trial[2]))) < (1 - 0.5 * lam) * res + 1e-14:
                break
            if lam <= 2**-6:
                if trial[2] is None:
                    raise MatchingError(f"no positive mu_hat root found at eps={eps}")
                break
            lam *= 0.5
        coef = coef + lam * step
        mu, g, H, corr = trial
        it += 1
    if res >= tol:
        raise MatchingError(f"matching Newton did not converge at eps={eps}: residual history {history}")
    nu2, z1, z2 = corr
    field_ = solve_dirichlet(curve, g, n_phi, n_s)
    return MatchingResult(eps=eps, mu_hat=mu, field=field_, residual=res, iterations=it,
                          residual_history=history, variant=variant, nu2=nu2, zeta1=z1, zeta2=z2,
                          dirichlet_data=g, neumann_data=nd_of(curve, eps, mu, corr, variant),
                          extras={"pointwise_residual": float(np.max(np.abs(H))),
                                  "n_modes": n_modes, "jacobian_evaluations": jac_refreshes,
                                  "mu_coefficients": coef})


def nd_of(curve, eps, mu, corr, variant):
    return _boundary_data(curve, eps, mu, *corr, variant)[1]


def export_csv(path, curve: BoundaryCurve, mu0, results) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "mu_hat_0"] + [f"mu_hat_eps={r.eps:g}" for r in results])
        for j in range(curve.n):
            writer.writerow([f"{curve.theta[j]:.17g}", f"{mu0[j]:.17g}"] + [f"{r.mu_hat[j]:.17g}" for r in results])


def field_snapshot(field_: InteriorField) -> dict:
    """JSON layout {theta[], s[], values[][]} with theta the polar angle grid."""
    m = field_.mesh
    return {"theta": m.phi.tolist(), "s": m.s.tolist(), "values": m.to_grid(field_.values).tolist()}
