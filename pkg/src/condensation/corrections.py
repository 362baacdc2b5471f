"""Half-line linear solution operator and the layered boundary corrections.

All profiles live on the half-line grid of :class:`LineProfile` (t from 0
down to -T). Per-theta quantities are stacked along the leading axis, so a
correction array has shape (n_theta, n_t).

Curvature inside these formulas is the chart curvature k = -kappa (see
``geometry.chart_curvature``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundaryCurve, chart_curvature
from .profile1d import SQRT2, LN4, LineProfile, bubble, kernel_elements, kernel_elements_derivative, line_profile
from .spectral import cumulative_integral, fd_derivative_uniform, fourier_derivative


class QuadratureError(ArithmeticError):
    pass


def _integrate_to_minus_infinity(values, t):
    """Integral from -T to 0 of samples stored on a grid running 0 -> -T."""
    return -cumulative_integral(values, t, axis=-1)[..., -1]


@dataclass(frozen=True)
class HalfLineSolution:
    """Solution of -U'' - e^w U = e^w h with U(0) = U'(0) = 0 on t <= 0.

    ``a_coef`` and ``b_coef`` are the slope and offset of the linear
    far field U ~ a t + b as t -> -infinity. ``b_coef_published`` is the
    offset quadrature with the kernel 2/(1 - e^{sqrt2 t}) + t/sqrt2, which
    differs from the true offset by -2 sqrt2 a; it is kept for diagnostics.
    """

    t: np.ndarray
    U: np.ndarray
    U_prime: np.ndarray
    a_coef: np.ndarray
    b_coef: np.ndarray
    b_coef_published: np.ndarray
    a_measured: np.ndarray
    b_measured: np.ndarray
    c_coef: np.ndarray | None = None
    d_coef: np.ndarray | None = None

    def residual(self, forcing, profile: LineProfile, order: int = 8):
        """Finite-difference residual of -U'' - e^w U - e^w h."""
        upp = fd_derivative_uniform(self.U, -profile.h, 2, order=order, axis=-1)
        return -upp - profile.exp_w * (self.U + forcing)


def solve_halfline(forcing, profile: LineProfile | None = None, fit_window=(-35.0, -25.0)) -> HalfLineSolution:
    """Variation-of-parameters solution with kernel elements Z1, Z2.

    U = (Z2 * int_0^t Z1 e^w h - Z1 * int_0^t Z2 e^w h) / 2, using the
    Wronskian Z1 Z2' - Z1' Z2 = -2. ``forcing`` has shape (..., n_t).
    """
    profile = profile or line_profile()
    t = profile.grid
    h = np.asarray(forcing, dtype=float)
    if h.shape[-1] != t.size:
        raise ValueError("forcing must be sampled on the profile grid")
    ew = profile.exp_w
    z1, z2 = kernel_elements(t)
    dz1, dz2 = kernel_elements_derivative(t)

    tail = np.abs(h * profile.w_prime * ew)
    cut = int(0.9 * t.size)
    total = np.max(np.abs(_integrate_to_minus_infinity(tail, t))) + 1e-300
    tail_part = np.max(-cumulative_integral(tail[..., cut:], t[cut:], axis=-1)[..., -1])
    if not np.all(np.isfinite(h)) or tail_part > 1e-8 * max(total, 1.0):
        raise QuadratureError(
            "integral of h w' e^w over (-inf, 0] does not converge on the grid "
            f"(tail contribution {tail_part:.3e})"
        )

    i1 = cumulative_integral(z1 * ew * h, t, axis=-1)
    i2 = cumulative_integral(z2 * ew * h, t, axis=-1)
    U = 0.5 * (z2 * i1 - z1 * i2)
    Up = 0.5 * (dz2 * i1 - dz1 * i2)

    a = _integrate_to_minus_infinity(h * profile.w_prime * ew, t) / SQRT2
    q = np.exp(SQRT2 * t)
    # 2 q/(1 - q) * w' = 2 sqrt2 q/(1 + q): the kernel is regular at 0
    kernel_true = 2 * SQRT2 * q / (1 + q) + t * profile.w_prime / SQRT2
    kernel_pub = 2 * SQRT2 / (1 + q) + t * profile.w_prime / SQRT2
    b = -_integrate_to_minus_infinity(kernel_true * h * ew, t)
    b_pub = -_integrate_to_minus_infinity(kernel_pub * h * ew, t)

    lo, hi = fit_window
    sel = (t >= lo) & (t <= hi)
    a_meas = np.mean(Up[..., sel], axis=-1)
    b_meas = np.mean(U[..., sel] - Up[..., sel] * t[sel], axis=-1)
    return HalfLineSolution(t=t, U=U, U_prime=Up, a_coef=a, b_coef=b, b_coef_published=b_pub,
                            a_measured=a_meas, b_measured=b_meas)


def halfline_reference(h_func, offset: float, L: float = 25.0, tol: float = 1e-10, nodes: int = 4001):
    """Independent collocation solve of -U'' - e^w U = e^w h on [-L, 0].

    Boundary conditions: U'(0) = 0 and the far-field offset condition
    U(-L) + L U'(-L) = offset (that is, U - t U' equals the offset).
    Returns a callable t -> U(t).
    """
    from scipy.integrate import solve_bvp

    def rhs(t, y):
        ew = bubble(t)[2]
        return np.vstack([y[1], -ew * (y[0] + h_func(t))])

    def bc(ya, yb):
        return np.array([ya[0] + L * ya[1] - offset, yb[1]])

    grid = np.linspace(-L, 0.0, nodes)
    sol = solve_bvp(rhs, bc, grid, np.zeros((2, grid.size)), tol=tol, max_nodes=200000)
    if not sol.success:
        raise RuntimeError(f"reference BVP failed: {sol.message}")
    return lambda t: sol.sol(t)[0]


def halfline_shooting(h_func, L: float = 25.0):
    """Independent initial-value integration with U(0) = U'(0) = 0 (DOP853)."""
    from scipy.integrate import solve_ivp

    def rhs(t, y):
        ew = bubble(t)[2]
        return [y[1], -ew * (y[0] + h_func(t))]

    sol = solve_ivp(rhs, (0.0, -L), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True)
    return lambda t: sol.sol(t)[0]


# ---------------------------------------------------------------------------
# building blocks on the t-grid, cached per profile

@dataclass(frozen=True)
class _Primitives:
    W1: np.ndarray   # int_0^t w
    W2: np.ndarray   # int_0^t s w(s) ds
    W3: np.ndarray   # int_0^t int_0^s (w - ln4)
    P1: np.ndarray   # int_0^t int_0^s r w'(r)
    P2: np.ndarray   # int_0^t int_0^s r^2 w''(r)


_PRIM_CACHE: dict = {}


def _primitives(profile: LineProfile) -> _Primitives:
    key = (profile.T, profile.h, profile.grid.size)
    if key not in _PRIM_CACHE:
        t = profile.grid
        ci = lambda f: cumulative_integral(f, t)  # noqa: E731
        _PRIM_CACHE[key] = _Primitives(
            W1=ci(profile.w),
            W2=ci(t * profile.w),
            W3=ci(ci(profile.w - LN4)),
            P1=ci(ci(t * profile.w_prime)),
            P2=ci(ci(-(t**2) * profile.exp_w)),
        )
    return _PRIM_CACHE[key]


def nu1_closed_form(kappa_chart, mu_hat):
    """Slope of v in closed form: 2k(1 - ln 2) + ln4 * mu_hat."""
    return 2 * np.asarray(kappa_chart) * (1 - np.log(2.0)) + LN4 * np.asarray(mu_hat)


@dataclass(frozen=True)
class ThetaData:
    """Concentration function and its arclength derivatives on the curve grid."""

    theta: np.ndarray
    kappa_chart: np.ndarray
    mu_hat: np.ndarray
    log_mu2_dd: np.ndarray     # d^2/dth^2 ln mu_hat^2
    inv_mu_dd: np.ndarray      # d^2/dth^2 (1 / mu_hat)
    coef_A: np.ndarray         # 2 mu'^2/mu^2 - mu''/mu
    coef_B: np.ndarray         # mu'^2/mu^2


def theta_data(curve: BoundaryCurve, mu_hat) -> ThetaData:
    mu_hat = np.asarray(mu_hat, dtype=float)
    if mu_hat.shape != curve.theta.shape:
        raise ValueError("mu_hat must be sampled on the curve's arclength grid")
    if np.any(mu_hat <= 0):
        raise ValueError("mu_hat must be positive")
    d1 = fourier_derivative(mu_hat, curve.ell, 1)
    d2 = fourier_derivative(mu_hat, curve.ell, 2)
    return ThetaData(
        theta=curve.theta,
        kappa_chart=chart_curvature(curve),
        mu_hat=mu_hat,
        log_mu2_dd=fourier_derivative(np.log(mu_hat**2), curve.ell, 2),
        inv_mu_dd=fourier_derivative(1.0 / mu_hat, curve.ell, 2),
        coef_A=2 * d1**2 / mu_hat**2 - d2 / mu_hat,
        coef_B=d1**2 / mu_hat**2,
    )


def theta_second_derivative_of_w_mu(td: ThetaData, t):
    """d^2/dth^2 of w(y/mu) - 2 ln mu at fixed y, as a function of t = y/mu."""
    _, wp, ew = bubble(t)
    A = td.coef_A[:, None]
    B = td.coef_B[:, None]
    return -td.log_mu2_dd[:, None] + t * wp * A - t**2 * ew * B


@dataclass(frozen=True)
class AlphaTerms:
    alpha1: np.ndarray
    alpha2: np.ndarray
    y: np.ndarray | None = None
    alpha_mu: np.ndarray | None = None


def alpha_terms(curve: BoundaryCurve, mu_hat, eps: float | None = None, profile: LineProfile | None = None,
                y=None, mu_derivative_terms: bool = True) -> AlphaTerms:
    """First and second order curvature/concentration corrections.

    alpha1 = k W1 + (sqrt2/2) mu t^2
    alpha2 = k^2 W2 - ln(mu^2) t^2/2 + W3 + (sqrt2/6) mu k t^3 + (ln mu^2)'' t^2/2
             - A P1 - B P2
    The last two terms come from theta-derivatives of mu at fixed y; they
    vanish for constant mu and can be switched off with
    ``mu_derivative_terms=False``.

    If ``eps`` and ``y`` (offsets 0 >= y >= -Y, uniform, descending) are
    given, the exact collar correction alpha_mu(theta, y) is computed by
    nested quadrature of its Cauchy problem.
    """
    profile = profile or line_profile()
    td = theta_data(curve, mu_hat)
    pr = _primitives(profile)
    t = profile.grid[None, :]
    k = td.kappa_chart[:, None]
    mu = td.mu_hat[:, None]
    alpha1 = k * pr.W1[None, :] + (SQRT2 / 2) * mu * t**2
    alpha2 = (k**2 * pr.W2[None, :] - np.log(mu**2) * t**2 / 2 + pr.W3[None, :]
              + (SQRT2 / 6) * mu * k * t**3 + td.log_mu2_dd[:, None] * t**2 / 2)
    if mu_derivative_terms:
        alpha2 = alpha2 - td.coef_A[:, None] * pr.P1[None, :] - td.coef_B[:, None] * pr.P2[None, :]
    alpha_mu = None
    if eps is not None and y is not None:
        alpha_mu = alpha_mu_exact(td, eps, np.asarray(y, dtype=float))
    return AlphaTerms(alpha1=alpha1, alpha2=alpha2, y=None if y is None else np.asarray(y), alpha_mu=alpha_mu)


def alpha_mu_exact(td: ThetaData, eps: float, y):
    """Nested-quadrature solution of
        -a'' + k/(1 - yk) a' = -k/(1 - yk) d_y w_mu + (1 - yk)^-2 d_thth w_mu - w_mu + ln(lambda),
        a(0) = a'(0) = 0,
    i.e. a = -int_0^y 1/(1 - s k) int_0^s (1 - r k) F(r) dr ds.
    """
    k = td.kappa_chart[:, None]
    mu = eps * td.mu_hat[:, None]
    yy = y[None, :]
    t = yy / mu
    _, wp, _ = bubble(t)
    dy_w = wp / mu
    # w_mu - ln(lambda) = w(t) - 2 ln(mu) - ln4 + 2 ln(eps) + sqrt2/eps
    w_minus_loglam = bubble(t)[0] - np.log(td.mu_hat[:, None] ** 2) - LN4 + SQRT2 / eps
    m = 1 - yy * k
    weighted = -k * dy_w - m * w_minus_loglam + theta_second_derivative_of_w_mu(td, t) / m
    inner = cumulative_integral(weighted, y, axis=-1)
    return -cumulative_integral(inner / m, y, axis=-1)


def beta_mu_exact(td: ThetaData, eps: float, y, v_of_t):
    """beta_mu = int_0^y k/(1 - s k) int_0^s d_y v_mu, with v_mu(y) = mu v(y/mu).

    Since v_mu(0) = 0 the inner integral is v_mu itself.
    ``v_of_t(t)`` returns v at the (n_theta, n_y) array of t-values.
    """
    k = td.kappa_chart[:, None]
    mu = eps * td.mu_hat[:, None]
    yy = y[None, :]
    v_mu = mu * v_of_t(yy / mu)
    return cumulative_integral(k * v_mu / (1 - yy * k), y, axis=-1)


@dataclass(frozen=True)
class VTerm:
    solution: HalfLineSolution
    nu1: np.ndarray
    nu1_quadrature: np.ndarray
    nu2: np.ndarray
    nu2_published: np.ndarray
    nu2_measured: np.ndarray


def v_term(curve: BoundaryCurve, mu_hat, alpha1=None, profile: LineProfile | None = None) -> VTerm:
    profile = profile or line_profile()
    if alpha1 is None:
        alpha1 = alpha_terms(curve, mu_hat, profile=profile).alpha1
    sol = solve_halfline(alpha1, profile)
    k = chart_curvature(curve)
    return VTerm(
        solution=sol,
        nu1=nu1_closed_form(k, mu_hat),
        nu1_quadrature=sol.a_coef,
        nu2=sol.b_coef,
        nu2_published=sol.b_coef_published,
        nu2_measured=sol.b_measured,
    )


@dataclass(frozen=True)
class BetaZTerms:
    beta1: np.ndarray
    forcing: np.ndarray
    solution: HalfLineSolution
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta2_published: np.ndarray
    zeta2_measured: np.ndarray


def beta_z_terms(curve: BoundaryCurve, mu_hat, vt: VTerm, alpha: AlphaTerms,
                 profile: LineProfile | None = None) -> BetaZTerms:
    profile = profile or line_profile()
    t = profile.grid
    k = chart_curvature(curve)[:, None]
    inner = cumulative_integral(vt.solution.U_prime, t, axis=-1)
    beta1 = k * cumulative_integral(inner, t, axis=-1)
    h = alpha.alpha2 + beta1 + 0.5 * (alpha.alpha1 + vt.solution.U) ** 2
    sol = solve_halfline(h, profile)
    return BetaZTerms(beta1=beta1, forcing=h, solution=sol, zeta1=sol.a_coef, zeta2=sol.b_coef,
                      zeta2_published=sol.b_coef_published, zeta2_measured=sol.b_measured)


@dataclass(frozen=True)
class CorrectionSet:
    theta: np.ndarray
    t: np.ndarray
    mu_hat: np.ndarray
    kappa_chart: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    v: np.ndarray
    v_prime: np.ndarray
    beta1: np.ndarray
    z: np.ndarray
    z_prime: np.ndarray
    nu1: np.ndarray
    nu1_quadrature: np.ndarray
    nu2: np.ndarray
    nu2_published: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta2_published: np.ndarray
    extras: dict = field(default_factory=dict, repr=False)


def compute_corrections(curve: BoundaryCurve, mu_hat, profile: LineProfile | None = None,
                        mu_derivative_terms: bool = True) -> CorrectionSet:
    profile = profile or line_profile()
    mu_hat = np.asarray(mu_hat, dtype=float)
    alpha = alpha_terms(curve, mu_hat, profile=profile, mu_derivative_terms=mu_derivative_terms)
    vt = v_term(curve, mu_hat, alpha.alpha1, profile)
    bz = beta_z_terms(curve, mu_hat, vt, alpha, profile)
    return CorrectionSet(
        theta=curve.theta,
        t=profile.grid,
        mu_hat=mu_hat,
        kappa_chart=chart_curvature(curve),
        alpha1=alpha.alpha1,
        alpha2=alpha.alpha2,
        v=vt.solution.U,
        v_prime=vt.solution.U_prime,
        beta1=bz.beta1,
        z=bz.solution.U,
        z_prime=bz.solution.U_prime,
        nu1=vt.nu1,
        nu1_quadrature=vt.nu1_quadrature,
        nu2=vt.nu2,
        nu2_published=vt.nu2_published,
        zeta1=bz.zeta1,
        zeta2=bz.zeta2,
        zeta2_published=bz.zeta2_published,
        extras={"nu2_measured": vt.nu2_measured, "zeta2_measured": bz.zeta2_measured,
                "z_forcing": bz.forcing},
    )


def matching_hooks(curve: BoundaryCurve, profile: LineProfile | None = None, offset_kernel: str = "true"):
    """Callback mu_hat -> (nu2, zeta1, zeta2) for the boundary matching.

    ``offset_kernel`` selects the offset quadrature: "true" (consistent with
    the computed far field) or "published" (the displayed kernel).
    """
    profile = profile or line_profile()

    def hooks(mu_hat):
        cs = compute_corrections(curve, mu_hat, profile)
        if offset_kernel == "published":
            return cs.nu2_published, cs.zeta1, cs.zeta2_published
        return cs.nu2, cs.zeta1, cs.zeta2

    return hooks


def export_csv(path, cs: CorrectionSet) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "nu1", "nu2", "zeta1", "zeta2"])
        for row in zip(cs.theta, cs.nu1, cs.nu2, cs.zeta1, cs.zeta2):
            writer.writerow([f"{v:.17g}" for v in row])
