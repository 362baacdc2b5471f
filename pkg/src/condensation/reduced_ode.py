"""Periodic reduced equation eps^2 (x'' + p1 x') + p0 x = f on [0, ell):
Liouville-type transform to (0, pi), its periodic spectrum, the resonance
gap scan in eps, and a spectral solver with a-priori norm reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .spectral import (
    PeriodicSeries,
    fourier_derivative,
    fourier_diff_matrix,
    periodic_antiderivative,
)

DEFAULT_GAP_CONSTANT = 0.05


class ResonanceError(ValueError):
    def __init__(self, eps, m, margin, c0):
        self.eps, self.m, self.margin, self.c0 = eps, m, margin, c0
        super().__init__(
            f"eps={eps:.6g} is inside the forbidden band of mode m={m}: "
            f"|4 pi^2 m^2 eps^2 - Lambda| / eps = {margin:.4g} < c0 = {c0:g}"
        )


@dataclass
class ReducedProblem:
    """Coefficients sampled on a uniform theta grid of period ``ell``.

    ``p0_perturbation`` (optional) maps eps to samples of the correction
    p0 + eps * p0_tilde(eps); ``lambda_p0`` always refers to p0 alone.
    """

    ell: float
    theta: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    lambda_p0: float
    nu0: float
    n_s: int
    s_of_theta: np.ndarray
    s_grid: np.ndarray
    theta_of_s: np.ndarray
    q: np.ndarray
    p0_perturbation: Callable | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def sqrt_lambda(self):
        return math.sqrt(self.lambda_p0)

    def lambda_eps(self, eps: float) -> float:
        """Lambda_eps with Lambda_{p0 + eps p0_tilde} = Lambda_{p0} + eps Lambda_eps."""
        if self.p0_perturbation is None:
            return 0.0
        pert = np.asarray(self.p0_perturbation(eps), dtype=float)
        lam = _lambda_functional(self.p0 + eps * pert, self.ell)
        return (lam - self.lambda_p0) / eps

    def perturbed(self, eps: float) -> "ReducedProblem":
        """The problem with p0 replaced by p0 + eps p0_tilde(eps)."""
        if self.p0_perturbation is None:
            return self
        pert = np.asarray(self.p0_perturbation(eps), dtype=float)
        return reduced_from_samples(self.ell, self.p0 + eps * pert, self.p1, n_s=self.n_s)

    def to_s(self, values_theta):
        """Resample a periodic theta-grid function at theta(s_j)."""
        return PeriodicSeries(values_theta, self.ell)(self.theta_of_s)

    def to_theta(self, values_s):
        return PeriodicSeries(values_s, np.pi)(self.s_of_theta)


def _lambda_functional(p0, ell):
    if np.any(p0 <= 0):
        raise ValueError("p0 must be strictly positive")
    return float((np.mean(np.sqrt(p0)) * ell) ** 2)


def reduced_from_samples(ell: float, p0, p1=None, n_s: int = 256, p0_perturbation=None) -> ReducedProblem:
    """Build the transformed problem from coefficient samples on a uniform theta grid."""
    p0 = np.asarray(p0, dtype=float)
    n = p0.size
    if np.any(p0 <= 0):
        raise ValueError(f"p0 must be strictly positive (min {p0.min():.3e})")
    p1 = np.zeros(n) if p1 is None else np.broadcast_to(np.asarray(p1, dtype=float), (n,)).copy()
    theta = ell * np.arange(n) / n
    root = np.sqrt(p0)
    mean_root, prim = periodic_antiderivative(root, ell)
    big = mean_root * ell
    lam = big**2
    scale = np.pi / big
    s_theta = scale * (mean_root * theta + prim)

    # invert s(theta) on the uniform s grid by Newton on the periodic part
    s_grid = np.pi * np.arange(n_s) / n_s
    prim_series = PeriodicSeries(prim, ell)
    root_series = PeriodicSeries(root, ell)
    th = s_grid / scale / mean_root
    for _ in range(50):
        resid = scale * (mean_root * th + prim_series(th)) - s_grid
        th = th - resid / (scale * root_series(th))
        if np.max(np.abs(resid)) < 1e-14:
            break

    # q(s) = (dp0/ds) / (2 p0) + p1 sqrt(Lambda) / (pi sqrt(p0))
    ds_dtheta = scale * root
    dp0_ds = fourier_derivative(p0, ell) / ds_dtheta
    q_theta = dp0_ds / (2 * p0) + p1 / ds_dtheta
    q = PeriodicSeries(q_theta, ell)(th)
    return ReducedProblem(ell=float(ell), theta=theta, p0=p0, p1=p1, lambda_p0=lam, nu0=lam / np.pi**2,
                          n_s=n_s, s_of_theta=s_theta, s_grid=s_grid, theta_of_s=th, q=q,
                          p0_perturbation=p0_perturbation)


def build_reduced(curve, eigenpair, mu_hat0, p0_perturbation=None, p1=None, n_s: int = 256) -> ReducedProblem:
    """Reduced problem with p0 = Lambda1 / mu_hat0^2 on the curve's arclength grid."""
    mu = np.asarray(mu_hat0, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("mu_hat0 must be positive")
    lam1 = eigenpair.lambda1 if hasattr(eigenpair, "lambda1") else float(eigenpair)
    p0 = lam1 / mu**2
    if np.any(p0 <= 0):
        raise ValueError("p0 = Lambda1 / mu_hat0^2 must be positive; check the sign of Lambda1")
    return reduced_from_samples(curve.ell, p0, p1, n_s=n_s, p0_perturbation=p0_perturbation)


def check_perturbation_bounds(problem: ReducedProblem, eps_samples, rel_step: float = 1e-4) -> dict:
    """Measured sup over eps of ||p0_tilde||_{C^2}, eps ||d p0_tilde/d eps||_inf and
    |Lambda_eps| + eps |d Lambda_eps / d eps|."""
    if problem.p0_perturbation is None:
        return {"c2_norm": 0.0, "eps_derivative": 0.0, "lambda_bound": 0.0}
    c2 = der = lb = 0.0
    for e in eps_samples:
        pt = np.asarray(problem.p0_perturbation(e), dtype=float)
        d1 = fourier_derivative(pt, problem.ell, 1)
        d2 = fourier_derivative(pt, problem.ell, 2)
        c2 = max(c2, np.max(np.abs(pt)) + np.max(np.abs(d1)) + np.max(np.abs(d2)))
        h = rel_step * e
        dpe = (np.asarray(problem.p0_perturbation(e + h)) - np.asarray(problem.p0_perturbation(e - h))) / (2 * h)
        der = max(der, e * np.max(np.abs(dpe)))
        dl = (problem.lambda_eps(e + h) - problem.lambda_eps(e - h)) / (2 * h)
        lb = max(lb, abs(problem.lambda_eps(e)) + e * abs(dl))
    return {"c2_norm": float(c2), "eps_derivative": float(der), "lambda_bound": float(lb)}


# -- spectrum ---------------------------------------------------------------

@dataclass
class SpectrumReport:
    nu: np.ndarray | None = None               # pair-averaged nu_m, m = 0..M
    nu_all: np.ndarray | None = None           # all computed eigenvalues (real parts, sorted)
    sqrt_defect: np.ndarray | None = None      # sqrt(nu_m) - 2m
    pair_splitting: np.ndarray | None = None
    max_imag: float = 0.0
    eps: np.ndarray | None = None
    gap_margins: np.ndarray | None = None      # (n_eps, n_m) |4 pi^2 m^2 eps^2 - Lambda| / eps
    min_margin: np.ndarray | None = None
    nearest_m: np.ndarray | None = None
    admissible: np.ndarray | None = None
    m0: np.ndarray | None = None
    a0: np.ndarray | None = None
    sufficient: np.ndarray | None = None       # a0 <= 1 - c0 / (2 pi sqrt(Lambda))
    forbidden_bands: list = field(default_factory=list)   # (m, eps_lo, eps_hi)
    c0: float = DEFAULT_GAP_CONSTANT


def _transformed_operator(problem: ReducedProblem):
    """Matrix of y -> -(y'' + q y') on the periodic s grid."""
    key = "op"
    if key not in problem._cache:
        D1 = fourier_diff_matrix(problem.n_s, np.pi, 1)
        D2 = fourier_diff_matrix(problem.n_s, np.pi, 2)
        problem._cache[key] = -(D2 + problem.q[:, None] * D1)
    return problem._cache[key]


def _eigensystem(problem: ReducedProblem):
    if "eig" not in problem._cache:
        A = _transformed_operator(problem)
        vals, vecs = sla.eig(A)
        if not np.all(np.isfinite(vals)):
            raise RuntimeError("periodic eigenvalue solve failed (non-finite eigenvalues)")
        order = np.argsort(vals.real)
        problem._cache["eig"] = (vals[order], vecs[:, order])
    return problem._cache["eig"]


def periodic_spectrum(problem: ReducedProblem, M: int = 16) -> SpectrumReport:
    """Eigenvalues nu of y'' + q y' + nu y = 0 with period pi.

    For m >= 1 the eigenvalues come in near-degenerate pairs close to 4 m^2;
    ``nu[m]`` is the pair mean and ``pair_splitting[m]`` their difference.
    Only modes well below the grid Nyquist limit are trusted, so M is
    capped at n_s / 6.
    """
    if M < 8:
        raise ValueError("need M >= 8 modes")
    if M > problem.n_s // 6:
        raise ValueError(f"M={M} too large for n_s={problem.n_s}; need n_s >= 6 M")
    vals, _ = _eigensystem(problem)
    re = vals.real
    nu = np.empty(M + 1)
    split = np.zeros(M + 1)
    nu[0] = re[0]
    for m in range(1, M + 1):
        a, b = re[2 * m - 1], re[2 * m]
        nu[m] = 0.5 * (a + b)
        split[m] = b - a
    defect = np.sqrt(np.maximum(nu, 0.0)) - 2 * np.arange(M + 1)
    return SpectrumReport(nu=nu, nu_all=re, sqrt_defect=defect, pair_splitting=split,
                          max_imag=float(np.max(np.abs(vals[:2 * M + 1].imag))))


def count_below(problem: ReducedProblem, level: float) -> int:
    vals, _ = _eigensystem(problem)
    return int(np.sum(vals.real < level))


# -- gap scan ---------------------------------------------------------------

def _effective_lambda(problem, eps):
    return problem.lambda_p0 + eps * problem.lambda_eps(eps)


def gap_margin(problem: ReducedProblem, eps: float, m_max: int | None = None):
    """Per-mode margins |4 pi^2 m^2 eps^2 - Lambda_eff| / eps for m = 0..m_max."""
    lam = _effective_lambda(problem, eps)
    if m_max is None:
        m_max = int(math.ceil(math.sqrt(lam) / (math.pi * eps))) + 2
    m = np.arange(m_max + 1)
    return np.abs(4 * np.pi**2 * m**2 * eps**2 - lam) / eps


def forbidden_bands(problem: ReducedProblem, eps_min: float, eps_max: float,
                    c0: float = DEFAULT_GAP_CONSTANT):
    """Intervals (m, lo, hi) of eps in [eps_min, eps_max] violating the gap condition."""
    lam = problem.lambda_p0
    out = []
    m_hi = int(math.ceil(math.sqrt(lam + 1.0) / (2 * math.pi * eps_min))) + 2
    for m in range(1, m_hi + 1):
        a = 4 * np.pi**2 * m**2
        if problem.p0_perturbation is None:
            disc = math.sqrt(c0**2 + 4 * a * lam)
            lo, hi = (-c0 + disc) / (2 * a), (c0 + disc) / (2 * a)
        else:
            center = math.sqrt(lam) / (2 * math.pi * m)

            def signed(e, sgn):
                return a * e**2 - _effective_lambda(problem, e) + sgn * c0 * e

            try:
                lo = brentq(signed, 0.5 * center, 1.5 * center, args=(1.0,), xtol=1e-15)
                hi = brentq(signed, 0.5 * center, 1.5 * center, args=(-1.0,), xtol=1e-15)
            except ValueError:
                continue
        if hi >= eps_min and lo <= eps_max:
            out.append((m, lo, hi))
    return sorted(out, key=lambda t: t[1])


def gap_scan(problem: ReducedProblem, eps_values, c0: float = DEFAULT_GAP_CONSTANT) -> SpectrumReport:
    """Evaluate the gap condition on each eps and report forbidden bands."""
    eps_values = np.atleast_1d(np.asarray(eps_values, dtype=float))
    if c0 <= 0:
        raise ValueError("gap constant c0 must be positive")
    margins, min_margin, nearest, m0s, a0s = [], [], [], [], []
    width = 0
    for e in eps_values:
        row = gap_margin(problem, e)
        margins.append(row)
        width = max(width, row.size)
        k = int(np.argmin(row))
        min_margin.append(row[k])
        nearest.append(k)
        ratio = math.sqrt(_effective_lambda(problem, e)) / (2 * math.pi * e)
        m0s.append(int(math.floor(ratio)))
        a0s.append(ratio - math.floor(ratio))
    table = np.full((eps_values.size, width), np.nan)
    for i, row in enumerate(margins):
        table[i, :row.size] = row
    min_margin = np.array(min_margin)
    a0s = np.array(a0s)
    bands = forbidden_bands(problem, float(eps_values.min()), float(eps_values.max()), c0)
    return SpectrumReport(eps=eps_values, gap_margins=table, min_margin=min_margin,
                          nearest_m=np.array(nearest), admissible=min_margin >= c0,
                          m0=np.array(m0s), a0=a0s,
                          sufficient=a0s <= 1 - c0 / (2 * np.pi * problem.sqrt_lambda),
                          forbidden_bands=bands, c0=c0)


def check_admissible(problem: ReducedProblem, eps: float, c0: float = DEFAULT_GAP_CONSTANT):
    row = gap_margin(problem, eps)
    k = int(np.argmin(row))
    if row[k] < c0:
        raise ResonanceError(eps, k, float(row[k]), c0)
    return float(row[k])


# -- solver -----------------------------------------------------------------

@dataclass
class ReducedSolution:
    eps: float
    theta: np.ndarray
    x: np.ndarray
    x_dot: np.ndarray
    x_ddot: np.ndarray
    residual: float                 # sup of eps^2 (x'' + p1 x') + p0 x - f on the theta grid
    norm_eps: float                 # eps^2 |x''| + eps |x'| + |x|
    bound_ratio: float              # eps |x| / |f|
    c2_ratio: float                 # norm_eps / (|f| + |f'| + |f''|)
    coefficients: np.ndarray        # f_m / (nu0 - eps^2 nu_m) in the eigenbasis
    denominators: np.ndarray        # nu0 - eps^2 nu_m
    gap: float | None               # minimal gap margin (None when unchecked)
    extras: dict = field(default_factory=dict)


def dense_reduced_solve(problem: ReducedProblem, eps: float, f_theta):
    """Direct Fourier-collocation solve of the theta-domain equation (independent route)."""
    n = problem.theta.size
    D1 = fourier_diff_matrix(n, problem.ell, 1)
    D2 = fourier_diff_matrix(n, problem.ell, 2)
    A = eps**2 * (D2 + problem.p1[:, None] * D1) + np.diag(problem.p0)
    return np.linalg.solve(A, f_theta)


def solve_reduced(problem: ReducedProblem, eps: float, f, c0: float = DEFAULT_GAP_CONSTANT,
                  check_gap: bool = True) -> ReducedSolution:
    """Solve by expansion in the eigenfunctions of the transformed operator.

    ``f`` is either samples on ``problem.theta`` or a callable of theta.
    With ``check_gap`` the gap condition is enforced first and a
    ResonanceError names the offending mode.
    """
    prob = problem.perturbed(eps)
    gap = check_admissible(prob if prob is not problem else problem, eps, c0) if check_gap else None
    f_theta = np.asarray(f(prob.theta) if callable(f) else f, dtype=float)
    if f_theta.shape != prob.theta.shape:
        raise ValueError("forcing must be sampled on the problem's theta grid")
    ft = prob.nu0 * prob.to_s(f_theta / prob.p0)
    vals, vecs = _eigensystem(prob)
    coef_f = np.linalg.solve(vecs, ft.astype(complex))
    denom = prob.nu0 - eps**2 * vals
    coef = coef_f / denom
    y = np.real(vecs @ coef)
    x = prob.to_theta(y)
    xd = fourier_derivative(x, prob.ell, 1)
    xdd = fourier_derivative(x, prob.ell, 2)
    resid = eps**2 * (xdd + prob.p1 * xd) + prob.p0 * x - f_theta
    fd = fourier_derivative(f_theta, prob.ell, 1)
    fdd = fourier_derivative(f_theta, prob.ell, 2)
    fn = float(np.max(np.abs(f_theta)))
    norm_eps = float(eps**2 * np.max(np.abs(xdd)) + eps * np.max(np.abs(xd)) + np.max(np.abs(x)))
    c2f = fn + float(np.max(np.abs(fd)) + np.max(np.abs(fdd)))
    return ReducedSolution(
        eps=eps, theta=prob.theta, x=x, x_dot=xd, x_ddot=xdd, residual=float(np.max(np.abs(resid))),
        norm_eps=norm_eps, bound_ratio=eps * float(np.max(np.abs(x))) / fn if fn > 0 else 0.0,
        c2_ratio=norm_eps / c2f if c2f > 0 else 0.0, coefficients=coef, denominators=denom, gap=gap,
        extras={"imag_part": float(np.max(np.abs(np.imag(vecs @ coef))))},
    )


def eigenmode_forcing(problem: ReducedProblem, m_index: int):
    """Forcing f on the theta grid whose transformed image is the m-th computed eigenfunction."""
    vals, vecs = _eigensystem(problem)
    y = vecs[:, m_index]
    # rotate to a real representative
    k = int(np.argmax(np.abs(y)))
    y = np.real(y * np.exp(-1j * np.angle(y[k])))
    y_theta = problem.to_theta(y)
    return problem.p0 * y_theta / problem.nu0, float(vals[m_index].real)


def resonance_sweep(problem: ReducedProblem, m: int, f, offsets) -> dict:
    """Solve at eps = eps_star (1 + offset) without the gap check, where
    eps_star = sqrt(nu0 / nu) for the upper member nu of the m-th eigenvalue
    pair; returns eps, distances |eps - eps_star| and sup norms of x."""
    vals, _ = _eigensystem(problem)
    eps_star = math.sqrt(problem.nu0 / vals[2 * m].real)
    out = {"eps_star": eps_star, "eps": [], "distance": [], "sup": []}
    for off in offsets:
        e = eps_star * (1 + off)
        sol = solve_reduced(problem, e, f, check_gap=False)
        out["eps"].append(e)
        out["distance"].append(abs(e - eps_star))
        out["sup"].append(float(np.max(np.abs(sol.x))))
    return {k: (np.array(v) if isinstance(v, list) else v) for k, v in out.items()}


def export_scan_csv(path, report: SpectrumReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "min_margin", "admissible", "nearest_m"])
        for e, mm, ad, nm in zip(report.eps, report.min_margin, report.admissible, report.nearest_m):
            w.writerow([f"{e:.17g}", f"{mm:.17g}", int(bool(ad)), int(nm)])


def export_spectrum_csv(path, report: SpectrumReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "nu_m", "sqrt_nu_m_minus_2m"])
        for m, (v, d) in enumerate(zip(report.nu, report.sqrt_defect)):
            w.writerow([m, f"{v:.17g}", f"{d:.17g}"])
