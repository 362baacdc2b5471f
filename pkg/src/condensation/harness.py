"""Command line, configuration, experiment orchestration and the acceptance checks."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
from scipy import stats

from . import assembly as A
from . import corrections as C
from . import harmonic as H
from . import profile1d as P
from . import reduced_ode as RO
from . import solver as S
from .geometry import GeometryError, build_boundary

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


# -- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    domain: dict = field(default_factory=lambda: {"disk": {"radius": 1.0}})
    star_domain: dict = field(default_factory=lambda: {"star": {"rho_coefficients": [1.0, 0.15, 0.0]}})
    resolution: int = 256
    eps_list: list = field(default_factory=lambda: [0.02, 0.04, 0.06, 0.08, 0.10])
    lambda_list: list | None = None
    residual_eps: list = field(default_factory=lambda: [0.05, 0.06, 0.08, 0.10, 0.12])
    sweep_eps: list = field(default_factory=lambda: [0.20, 0.15, 0.12, 0.10, 0.08])
    solve_eps: float = 0.1
    T: float = 40.0
    h: float = 0.02
    a: float = 27.0 / 28.0
    sigma: float = 0.5
    c0: float = RO.DEFAULT_GAP_CONSTANT
    n_phi: int = 64
    n_s: int = 16
    n_modes: int = 6
    variant: str = "published"
    offset_kernel: str = "true"
    solver: str = "radial"
    seed_kind: str = "ansatz"
    solver_n_phi: int = 16
    solver_n_s: int = 48
    radial_per_width: int = 20
    reduced_modes: int = 16
    jobs: int = 1
    out: str = "out"
    seed: int = 20240611

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ValueError(f"invalid config: {msg}")

        need(isinstance(self.domain, dict) and len(self.domain) == 1, "domain must be a one-key mapping")
        need(self.resolution >= 64 and self.resolution % 2 == 0, "resolution must be an even integer >= 64")
        for name in ("eps_list", "residual_eps", "sweep_eps"):
            vals = getattr(self, name)
            need(len(vals) > 0 and all(0 < float(e) < A.EPS_MAX for e in vals), f"{name} entries must lie in (0, 1/sqrt2)")
        if self.lambda_list is not None:
            need(all(0 < float(l) < 1 for l in self.lambda_list), "lambda_list entries must lie in (0, 1)")
        need(0 < self.solve_eps < A.EPS_MAX, "solve_eps must lie in (0, 1/sqrt2)")
        need(self.T >= 30, "profile truncation T must be >= 30")
        need(0 < self.h <= 0.05, "profile step h must lie in (0, 0.05]")
        need(A.A_RANGE[0] < self.a < A.A_RANGE[1], "cutoff exponent a must lie in (13/14, 1)")
        need(0 < self.sigma < 1, "sigma must lie in (0, 1)")
        need(self.c0 > 0, "gap constant c0 must be positive")
        need(self.n_phi >= 16 and self.n_phi % 2 == 0, "n_phi must be even and >= 16")
        need(self.n_s >= 8 and self.solver_n_s >= 8, "n_s must be >= 8")
        need(self.solver_n_phi >= 8 and self.solver_n_phi % 2 == 0, "solver_n_phi must be even and >= 8")
        need(1 <= self.n_modes <= self.resolution // 4, "n_modes out of range")
        need(self.variant in H.MATCHING_VARIANTS, f"variant must be one of {H.MATCHING_VARIANTS}")
        need(self.offset_kernel in ("true", "published"), "offset_kernel must be 'true' or 'published'")
        need(self.solver in ("radial", "2d"), "solver must be 'radial' or '2d'")
        need(self.seed_kind in ("ansatz", "composite"), "seed_kind must be 'ansatz' or 'composite'")
        need(self.radial_per_width >= 20, "radial_per_width must be >= 20 (layer resolution)")
        need(self.reduced_modes >= 8, "reduced_modes must be >= 8")
        need(self.jobs >= 1, "jobs must be >= 1")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"invalid config: unknown keys {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# -- rate fits ---------------------------------------------------------------------

@dataclass
class RateFit:
    kind: str
    exponent: float          # p in value ~ eps^p, or c in value ~ e^{-c/eps}
    confidence: float        # 95% half-width of the slope
    prefactor: float
    misfit: float            # max |fit/value - 1| over the points
    n: int


def rate_fit(eps, values, kind: str = "power") -> RateFit:
    """Least-squares fit of log(value) against log(eps) ("power") or 1/eps ("exponential")."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps.size != values.size or eps.size < 4:
        raise ValueError("rate_fit needs at least 4 (eps, value) pairs")
    if np.any(values <= 0) or np.any(eps <= 0):
        raise ValueError("rate_fit needs positive eps and values")
    y = np.log(values)
    if kind == "power":
        x = np.log(eps)
    elif kind == "exponential":
        x = 1.0 / eps
    else:
        raise ValueError("kind must be 'power' or 'exponential'")
    fit = stats.linregress(x, y)
    half = float(stats.t.ppf(0.975, eps.size - 2) * fit.stderr)
    pred = fit.intercept + fit.slope * x
    misfit = float(np.max(np.abs(np.expm1(pred - y))))
    slope = fit.slope if kind == "power" else -fit.slope
    return RateFit(kind=kind, exponent=float(slope), confidence=half, prefactor=float(np.exp(fit.intercept)),
                   misfit=misfit, n=int(eps.size))


# -- shared state ---------------------------------------------------------------------

class Context:
    """Lazily built immutable inputs shared by the checks of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def curve(self, which: str = "domain"):
        spec = getattr(self.cfg, which)
        return self._get(("curve", which), lambda: build_boundary(spec, self.cfg.resolution))

    @property
    def profile(self):
        return self._get("profile", lambda: P.line_profile(self.cfg.T, self.cfg.h))

    @property
    def eigenpair(self):
        return self._get("eigenpair", lambda: P.principal_eigenpair(self.cfg.T, self.cfg.h))

    def mu_hat0(self, which="domain"):
        c = self.cfg
        return self._get(("mu0", which), lambda: H.mu_hat_0(self.curve(which), c.n_phi, c.n_s))

    def hooks(self, which="domain"):
        return self._get(("hooks", which), lambda: C.matching_hooks(self.curve(which), self.profile,
                                                                    self.cfg.offset_kernel))

    def matching(self, eps, which="domain", variant=None):
        c = self.cfg
        variant = variant or c.variant
        return self._get(("match", which, float(eps), variant), lambda: H.solve_matching(
            self.curve(which), float(eps), self.hooks(which), variant=variant, n_modes=c.n_modes,
            n_phi=c.n_phi, n_s=c.n_s))

    def matchings(self, eps_values, which="domain", variant=None):
        """Matching results for several eps, in parallel when jobs > 1."""
        variant = variant or self.cfg.variant
        todo = [e for e in eps_values if ("match", which, float(e), variant) not in self._cache]
        if self.cfg.jobs > 1 and len(todo) > 1:
            args = [(asdict(self.cfg), which, float(e), variant) for e in todo]
            with ProcessPoolExecutor(max_workers=self.cfg.jobs) as ex:
                for e, res in zip(todo, ex.map(_matching_job, args)):
                    if isinstance(res, Exception):
                        self._cache[("match", which, float(e), variant)] = res
                    else:
                        self._cache[("match", which, float(e), variant)] = _rebind(res, self.curve(which), self.cfg)
        out = []
        for e in eps_values:
            try:
                r = self.matching(e, which, variant)
            except H.MatchingError as exc:
                r = exc
            if isinstance(r, Exception):
                self._cache[("match", which, float(e), variant)] = r
            out.append(r)
        return out

    def corrections(self, match: H.MatchingResult, which="domain"):
        return self._get(("corr", which, match.eps, match.variant),
                         lambda: C.compute_corrections(self.curve(which), match.mu_hat, self.profile))

    def ansatz(self, eps, which="domain", mesh_shape=None):
        m = self.matching(eps, which)
        if isinstance(m, Exception):
            raise m
        cs = self.corrections(m, which)
        par = A.AnsatzParams.from_eps(eps, a=self.cfg.a, sigma=self.cfg.sigma)
        return self._get(("ansatz", which, float(eps), mesh_shape),
                         lambda: A.assemble(self.curve(which), m, cs, par, self.eigenpair, mesh_shape=mesh_shape))

    def reduced(self, which="domain"):
        return self._get(("reduced", which), lambda: RO.build_reduced(self.curve(which), self.eigenpair,
                                                                      self.mu_hat0(which)))


def _matching_job(args):
    cfg_dict, which, eps, variant = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    ctx = Context(cfg)
    try:
        res = ctx.matching(eps, which, variant)
    except H.MatchingError as exc:
        return exc
    # the interior field holds a mesh with cached dense operators; ship only the data
    return {"eps": res.eps, "mu_hat": res.mu_hat, "variant": res.variant, "residual": res.residual,
            "iterations": res.iterations, "history": res.residual_history, "extras": res.extras}


def _rebind(data, curve, cfg):
    """Recompute the interior field for a matching result produced in a worker."""
    nu2, zeta1, zeta2 = C.matching_hooks(curve, P.line_profile(cfg.T, cfg.h), cfg.offset_kernel)(data["mu_hat"])
    g, nd = H._boundary_data(curve, data["eps"], data["mu_hat"], nu2, zeta1, zeta2, data["variant"])
    fld = H.solve_dirichlet(curve, g, cfg.n_phi, cfg.n_s)
    return H.MatchingResult(eps=data["eps"], mu_hat=data["mu_hat"], field=fld, residual=data["residual"],
                            iterations=data["iterations"], residual_history=data["history"],
                            variant=data["variant"], nu2=nu2, zeta1=zeta1, zeta2=zeta2, dirichlet_data=g,
                            neumann_data=nd, extras=data["extras"])


# -- checks --------------------------------------------------------------------------

@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    value: object
    target: str
    parts: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  [{self.criterion}] {self.name}: {self.value} (target {self.target})"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def check_spectrum(ctx: Context) -> Check:
    ep = ctx.eigenpair
    t = ep.grid
    exact = (2 * math.sqrt(2)) ** -0.5 / np.cosh(t / math.sqrt(2))
    l2 = float(math.sqrt(np.trapezoid((ep.Z0 - exact) ** 2, t)))
    err = abs(ep.lambda1 - 0.5)
    return Check(1, "principal eigenpair", err <= 1e-6 and l2 < 1e-5, f"Lambda1={ep.lambda1:.9f}, L2={l2:.2e}",
                 "|Lambda1-1/2|<=1e-6, L2<1e-5", {"lambda1": ep.lambda1, "lambda1_error": err, "z0_l2_error": l2})


def random_forcings(seed: int, n: int = 10):
    """Smooth forcings of at most linear growth on t <= 0."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a0, a1, a2, a3 = rng.uniform(-1, 1, 4)
        om = rng.uniform(0.2, 2.0)

        def h(t, a0=a0, a1=a1, a2=a2, a3=a3, om=om):
            t = np.asarray(t, dtype=float)
            return a0 + 0.1 * a1 * t + a2 * np.sin(om * t) + a3 * np.exp(t)

        out.append(h)
    return out


def check_halfline(ctx: Context) -> Check:
    prof = ctx.profile
    t = prof.grid
    worst_res, worst_bvp = 0.0, 0.0
    window = np.abs(t) <= 20
    for h in random_forcings(ctx.cfg.seed):
        sol = C.solve_halfline(h(t), prof)
        res = np.abs(sol.residual(h(t), prof))[:-10]
        worst_res = max(worst_res, float(res.max()))
        ref = C.halfline_reference(h, float(sol.b_coef))
        worst_bvp = max(worst_bvp, float(np.max(np.abs(sol.U[window] - ref(t[window])))))
    one = C.solve_halfline(np.ones_like(t), prof)
    a_err = abs(float(one.a_coef) - 1 / math.sqrt(2))
    ok = worst_res < 1e-8 and worst_bvp < 1e-6 and a_err <= 1e-8
    return Check(2, "half-line solution operator", ok,
                 f"residual={worst_res:.1e}, vs BVP={worst_bvp:.1e}, a(1) err={a_err:.1e}",
                 "residual<1e-8, BVP<1e-6, |a(1)-1/sqrt2|<=1e-8",
                 {"ode_residual": worst_res, "bvp_difference": worst_bvp, "a_one_error": a_err})


def check_nu1(ctx: Context) -> Check:
    parts = {}
    for which in ("domain", "star_domain"):
        mu0 = ctx.mu_hat0(which)
        cs = C.compute_corrections(ctx.curve(which), mu0, ctx.profile)
        parts[f"closed_vs_quadrature_{which}"] = float(np.max(np.abs(cs.nu1 - cs.nu1_quadrature)))
        if which == "domain":
            parts["disk_nu1"] = float(np.mean(cs.nu1))
            parts["disk_mu_hat0"] = float(np.mean(mu0))
    routes = all(parts[k] < 1e-6 for k in parts if k.startswith("closed"))
    value_ok = abs(parts["disk_nu1"] - 3.71956) <= 1e-4
    mu_ok = abs(parts["disk_mu_hat0"] - 2.24020) <= 1e-5
    parts.update({"routes_agree": routes, "disk_value_ok": value_ok, "mu_hat0_ok": mu_ok})
    return Check(3, "nu1 closed form vs quadrature", routes and value_ok and mu_ok,
                 f"route gap={max(parts['closed_vs_quadrature_domain'], parts['closed_vs_quadrature_star_domain']):.1e}, "
                 f"disk nu1={parts['disk_nu1']:.5f}, mu0={parts['disk_mu_hat0']:.7f}",
                 "routes<1e-6, disk nu1=3.71956+-1e-4, mu0=2.24020+-1e-5", parts)


def check_matching(ctx: Context) -> Check:
    eps = list(ctx.cfg.eps_list)
    mu0 = ctx.mu_hat0()
    results = ctx.matchings(eps)
    resid, dev = [], []
    for r in results:
        if isinstance(r, Exception):
            resid.append(float("inf"))
            dev.append(float("nan"))
        else:
            resid.append(float(r.residual))
            dev.append(float(np.max(np.abs(r.mu_hat - mu0))))
    res_ok = all(x < 1e-10 for x in resid)
    parts = {"eps": eps, "residuals": resid, "deviation": dev}
    fit_ok = False
    if all(np.isfinite(dev)) and len(eps) >= 4:
        fit = rate_fit(eps, dev)
        parts.update({"exponent": fit.exponent, "confidence": fit.confidence, "misfit": fit.misfit})
        fit_ok = abs(fit.exponent - 1.0) <= 0.2
    value = f"max residual={max(resid):.1e}, exponent={parts.get('exponent', float('nan')):.3f}"
    return Check(4, "boundary matching", res_ok and fit_ok, value, "residual<1e-10, exponent 1.0+-0.2", parts)


def residual_series(ctx: Context, eps_values):
    rows = []
    ctx.matchings(eps_values)
    for e in eps_values:
        f = ctx.ansatz(e)
        rep = A.residual(f)
        rows.append({"eps": float(e), "norm_star_star": rep.norm_star_star, "sup_interior": rep.sup_interior,
                     "c_proj_max": rep.c_proj_max, "norm_star_star_raw": rep.norm_star_star_raw})
    return rows


def check_error_rates(ctx: Context, eps_values=None) -> Check:
    eps_values = list(eps_values or ctx.cfg.residual_eps)
    rows = residual_series(ctx, eps_values)
    e = np.array([r["eps"] for r in rows])
    nss = np.array([r["norm_star_star"] for r in rows])
    sup = np.array([r["sup_interior"] for r in rows])
    pf = rate_fit(e, nss)
    ef = rate_fit(e, sup, kind="exponential")
    ok_p = pf.exponent >= 2.4
    ok_e = ef.exponent > 0 and ef.misfit < 0.10
    parts = {"rows": rows, "collar_exponent": pf.exponent, "collar_confidence": pf.confidence,
             "interior_c": ef.exponent, "interior_misfit": ef.misfit, "collar_ok": ok_p, "interior_ok": ok_e}
    return Check(5, "ansatz error rates", ok_p and ok_e,
                 f"collar p={pf.exponent:.3f}, interior c={ef.exponent:.3f} (misfit {ef.misfit:.2f})",
                 "p>=2.4; c>0 with misfit<10%", parts)


def check_resonance(ctx: Context) -> Check:
    M = ctx.cfg.reduced_modes
    n = max(128, 8 * M)
    flat = RO.reduced_from_samples(2 * np.pi, np.ones(n), n_s=max(256, 8 * M))
    sp = RO.periodic_spectrum(flat, M)
    flat_err = float(np.max(np.abs(sp.nu - 4 * np.arange(M + 1) ** 2)))
    gen = ctx.reduced("star_domain")
    gsp = RO.periodic_spectrum(gen, M)
    m = np.arange(4, M + 1)
    d = np.abs(gsp.sqrt_defect[4:M + 1])
    gfit = rate_fit(m.astype(float), d) if np.all(d > 0) else None
    gexp = gfit.exponent if gfit else float("nan")
    disk = ctx.reduced()
    bands = RO.forbidden_bands(disk, 0.05, 0.5, ctx.cfg.c0)
    centers = {mm: 0.5 * (lo + hi) for mm, lo, hi in bands if mm <= 3}
    rel = {mm: abs(centers[mm] * mm / 0.31564 - 1) for mm in (1, 2, 3) if mm in centers}
    bands_ok = len(rel) == 3 and all(v <= 0.01 for v in rel.values())
    flat_ok = flat_err <= 1e-8
    gen_ok = gfit is not None and gexp <= -3
    parts = {"flat_error": flat_err, "generic_exponent": gexp, "generic_defects": d, "band_centers": centers,
             "band_relative_error": rel, "flat_ok": flat_ok, "generic_ok": gen_ok, "bands_ok": bands_ok}
    return Check(6, "periodic spectrum and resonances", flat_ok and gen_ok and bands_ok,
                 f"flat err={flat_err:.1e}, generic exponent={gexp:.3f}, band err={max(rel.values()) if rel else float('nan'):.1e}",
                 "flat<=1e-8, exponent<=-3, centers within 1%", parts)


def admissible_near(problem, eps, c0, step=1e-4, tries=400):
    """Closest eps' >= eps (scanning upward) whose gap margin is at least 2 c0."""
    for k in range(tries):
        e = eps * (1 + step * k)
        if RO.gap_margin(problem, e).min() >= 2 * c0:
            return e
    raise RO.ResonanceError(eps, -1, 0.0, c0)


def check_reduced_solver(ctx: Context) -> Check:
    prob = ctx.reduced("star_domain")
    c0 = ctx.cfg.c0
    x = 2 * np.pi * prob.theta / prob.ell
    # no reflection symmetry, so every eigenmode is excited
    f = np.exp(np.cos(x) + 0.4 * np.sin(2 * x)) * (1 + 0.3 * np.sin(3 * x))
    targets = 0.1 / 2.0 ** np.arange(4)          # 8x decrease
    eps_used, ratios, resid = [], [], []
    for e in targets:
        e2 = admissible_near(prob, float(e), c0)
        sol = RO.solve_reduced(prob, e2, f, c0=c0)
        eps_used.append(e2)
        ratios.append(sol.bound_ratio)
        resid.append(sol.residual)
    bound = 1.0 / c0
    bounded = max(ratios) <= bound
    sweep = RO.resonance_sweep(prob, 3, f, [1e-5, 3e-6, 1e-6, 3e-7, 1e-7])
    bf = rate_fit(sweep["distance"], sweep["sup"])
    blow_ok = abs(bf.exponent + 1) <= 0.1
    parts = {"eps": eps_used, "bound_ratio": ratios, "residual": resid, "bound": bound,
             "blowup_exponent": bf.exponent, "sup_times_distance": sweep["sup"] * sweep["distance"],
             "bounded": bounded, "blowup_ok": blow_ok}
    return Check(7, "reduced solver bounds", bounded and blow_ok,
                 f"max eps|x|/|f|={max(ratios):.3g}, blow-up exponent={bf.exponent:.3f}",
                 f"ratios<={bound:g}, exponent -1+-0.1", parts)


def ansatz_radial_solve(ctx: Context, eps: float, seed_kind: str | None = None):
    seed_kind = seed_kind or ctx.cfg.seed_kind
    cur = ctx.curve()
    R = float(cur.rho_phi[0])
    lam = float(A.lambda_of_eps(eps))
    if seed_kind == "ansatz":
        prof_r = S.radial_profile_from_ansatz(ctx.ansatz(eps))
    else:
        prof_r = S.radial_seed(S.composite_seed(cur, eps, ctx.mu_hat0()))
    return S.radial_solve(R, lam, prof_r, per_width=ctx.cfg.radial_per_width)


def limit_sweep(ctx: Context, eps_values=None, seed_kind=None):
    cur = ctx.curve()
    if cur.kind != "disk":
        raise ValueError("the desk-scale sweep needs a disk domain")
    eps_values = list(eps_values or ctx.cfg.sweep_eps)
    U0 = H.solve_dirichlet(cur, np.ones(cur.n), ctx.cfg.n_phi, ctx.cfg.n_s)
    rr = np.linspace(0, 0.5, 51)
    U0r = U0.evaluate(np.stack([rr, 0 * rr], axis=1))
    rows = []
    ctx.matchings(eps_values) if (seed_kind or ctx.cfg.seed_kind) == "ansatz" else None
    for e in eps_values:
        row = {"eps": float(e)}
        try:
            res = ansatz_radial_solve(ctx, e, seed_kind)
        except (S.NewtonError, H.MatchingError) as exc:
            row.update({"converged": False, "note": str(exc)})
            rows.append(row)
            continue
        u = res.mesh.evaluate(res.field, rr)
        row.update({"converged": True, "iterations": res.newton_iters, "branch": res.branch_tag,
                    "eps_mass": e * res.mass, "boundary_max": res.boundary_max,
                    "interior_error": float(np.max(np.abs(e * u - math.sqrt(2) * U0r))),
                    "residual": res.residual_norm, "result": res})
        rows.append(row)
    return rows


def check_limit(ctx: Context) -> Check:
    rows = limit_sweep(ctx)
    target = 2 * math.pi * math.sqrt(2) / float(np.mean(ctx.mu_hat0()))
    conv = all(r.get("converged") and r["iterations"] <= 8 for r in rows)
    masses = [r.get("eps_mass", float("nan")) for r in rows]
    errs = [r.get("interior_error", float("nan")) for r in rows]
    last = rows[-1]
    mass_ok = bool(np.isfinite(masses[-1]) and abs(masses[-1] / target - 1) <= 0.10)
    gaps = np.abs(np.array(masses) - target)
    monotone = bool(np.all(np.diff(gaps) < 0))
    decreasing = bool(np.all(np.diff(errs) < 0))
    weak = []
    if last.get("converged"):
        weak = S.weak_limit_check(last["result"], ctx.curve(), float(np.mean(ctx.mu_hat0())))
    weak_ok = len(weak) == 3 and all(w["relative"] <= 0.10 for w in weak)
    branches = [r.get("branch") for r in rows]
    parts = {"eps": [r["eps"] for r in rows], "iterations": [r.get("iterations") for r in rows],
             "branches": branches, "eps_mass": masses, "target": target, "interior_error": errs,
             "weak_limit": weak, "converged_fast": conv, "mass_ok": mass_ok, "mass_monotone": monotone,
             "interior_decreasing": decreasing, "weak_ok": weak_ok}
    ok = conv and mass_ok and monotone and decreasing and weak_ok and all(b == "layer" for b in branches)
    return Check(8, "desk-scale limit on the disk", ok,
                 f"branches={branches}, iterations={parts['iterations']}, eps*mass(last)={masses[-1]:.4f}",
                 "<=8 iterations on the layer branch, eps*mass within 10% of 3.9665, monotone trends", parts)


def radial_vs_2d(ctx: Context, eps: float, seed_kind=None, n_phi=None, n_s=None):
    cur = ctx.curve()
    seed_kind = seed_kind or ctx.cfg.seed_kind
    lam = float(A.lambda_of_eps(eps))
    if seed_kind == "ansatz":
        f = ctx.ansatz(eps)
        point_seed = f.evaluate
    else:
        point_seed = S.composite_seed(cur, eps, ctx.mu_hat0())
    rad = S.radial_solve(float(cur.rho_phi[0]), lam, S.radial_seed(point_seed), per_width=ctx.cfg.radial_per_width)
    two = S.newton_2d(cur, lam, point_seed, n_phi=n_phi or ctx.cfg.solver_n_phi, n_s=n_s or ctx.cfg.solver_n_s)
    ref = rad.mesh.evaluate(rad.field, np.hypot(*two.mesh.points.T))
    return rad, two, float(np.max(np.abs(two.field - ref)))


def check_consistency(ctx: Context) -> Check:
    rad, two, diff = radial_vs_2d(ctx, ctx.cfg.solve_eps)
    parts = {"sup_difference": diff, "radial_branch": rad.branch_tag, "2d_branch": two.branch_tag,
             "radial_iterations": rad.newton_iters, "2d_iterations": two.newton_iters}
    return Check(9, "2D vs radial on the disk", diff <= 1e-6, f"sup diff={diff:.2e} ({two.branch_tag} branch)",
                 "<=1e-6", parts)


CRITERIA: dict[int, Callable] = {1: check_spectrum, 2: check_halfline, 3: check_nu1, 4: check_matching,
                                 5: check_error_rates, 6: check_resonance, 7: check_reduced_solver,
                                 8: check_limit, 9: check_consistency}


def run_check(k: int, ctx: Context) -> Check:
    t0 = time.perf_counter()
    try:
        chk = CRITERIA[k](ctx)
    except Exception as exc:        # a crash is a failed criterion with a message
        chk = Check(k, CRITERIA[k].__name__, False, f"error: {type(exc).__name__}: {exc}", "completes")
    chk.runtime = time.perf_counter() - t0
    return chk


# -- output helpers ---------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return "%.17g" % v
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommands ----------------------------------------------------------------------------

def cmd_profile(ctx, out, args):
    prof, ep = ctx.profile, ctx.eigenpair
    P.export_csv(os.path.join(out, "profile.csv"), prof, ep)
    chk = check_spectrum(ctx)
    return [chk], {"lambda1": f"{ep.lambda1:.6f}", "files": ["profile.csv"]}


def cmd_matching(ctx, out, args):
    cfg = ctx.cfg
    eps = list(cfg.eps_list)
    if cfg.lambda_list:
        eps = [A.eps_lambda_convert(lam=l) for l in cfg.lambda_list]
    res = [r for r in ctx.matchings(eps) if not isinstance(r, Exception)]
    H.export_csv(os.path.join(out, "matching.csv"), ctx.curve(), ctx.mu_hat0(), res)
    mu0 = ctx.mu_hat0()
    rows = [(r.eps, r.residual, r.iterations, float(np.max(np.abs(r.mu_hat - mu0)))) for r in res]
    write_csv(os.path.join(out, "matching_summary.csv"), ["eps", "residual", "iterations", "sup_mu_deviation"], rows)
    checks = [check_matching(ctx)] if eps == list(cfg.eps_list) else []
    return checks, {"files": ["matching.csv", "matching_summary.csv"], "solved": len(res), "requested": len(eps)}


def cmd_ansatz(ctx, out, args):
    eps_values = list(ctx.cfg.residual_eps)
    rows = residual_series(ctx, eps_values)
    write_csv(os.path.join(out, "residuals.csv"), ["eps", "norm_star_star", "sup_interior", "c_proj_max"],
              [(r["eps"], r["norm_star_star"], r["sup_interior"], r["c_proj_max"]) for r in rows])
    for e in eps_values:
        f = ctx.ansatz(e)
        rep = A.residual(f)
        with open(os.path.join(out, f"residual_report_{e:.4f}.json"), "w") as fh:
            fh.write(rep.to_json() + "\n")
    fit = rate_fit([r["eps"] for r in rows], [r["norm_star_star"] for r in rows]) if len(rows) >= 4 else None
    return [check_error_rates(ctx, eps_values)] if len(rows) >= 4 else [], {
        "files": ["residuals.csv"], "collar_exponent": fit.exponent if fit else None}


def cmd_resonance(ctx, out, args):
    prob = ctx.reduced()
    grid = np.linspace(0.02, 0.5, 961)
    rep = RO.gap_scan(prob, grid, ctx.cfg.c0)
    RO.export_scan_csv(os.path.join(out, "gap_scan.csv"), rep)
    sp = RO.periodic_spectrum(prob, ctx.cfg.reduced_modes)
    RO.export_spectrum_csv(os.path.join(out, "spectrum.csv"), sp)
    write_csv(os.path.join(out, "forbidden_bands.csv"), ["m", "eps_lo", "eps_hi", "center", "center_times_m"],
              [(m, lo, hi, 0.5 * (lo + hi), m * 0.5 * (lo + hi)) for m, lo, hi in rep.forbidden_bands])
    return [], {"files": ["gap_scan.csv", "spectrum.csv", "forbidden_bands.csv"],
                "band_centers": {m: 0.5 * (lo + hi) for m, lo, hi in rep.forbidden_bands[-6:]},
                "sqrt_lambda_over_2pi": prob.sqrt_lambda / (2 * math.pi)}


def _admissible_or_refuse(ctx, eps, force):
    prob = ctx.reduced()
    try:
        RO.check_admissible(prob, eps, ctx.cfg.c0)
        return True, ""
    except RO.ResonanceError as exc:
        if not force:
            raise
        return False, str(exc)


def cmd_solve(ctx, out, args):
    cfg = ctx.cfg
    eps = cfg.solve_eps
    ok, reason = _admissible_or_refuse(ctx, eps, args.force)
    cur = ctx.curve()
    lam = float(A.lambda_of_eps(eps))
    if cfg.solver == "radial":
        if cur.kind != "disk":
            raise ValueError("the radial solver needs a disk domain")
        res = ansatz_radial_solve(ctx, eps)
    else:
        seed = ctx.ansatz(eps).evaluate if cfg.seed_kind == "ansatz" else S.composite_seed(cur, eps, ctx.mu_hat0())
        res = S.newton_2d(cur, lam, seed, n_phi=cfg.solver_n_phi, n_s=cfg.solver_n_s)
    with open(os.path.join(out, "solve.json"), "w") as fh:
        d = json.loads(res.to_json())
        d["admissible"] = ok
        d["note"] = "" if ok else f"forced past the gap condition: {reason}"
        fh.write(json.dumps(d, indent=2, sort_keys=True) + "\n")
    S.dump_field(os.path.join(out, "field.bin"), res.field)
    write_csv(os.path.join(out, "field_nodes.csv"), ["x", "y", "u"],
              [(p[0], p[1], v) for p, v in zip(res.mesh.points, res.field)])
    return [], {"files": ["solve.json", "field.bin", "field_nodes.csv"], "branch": res.branch_tag,
                "iterations": res.newton_iters}


def cmd_sweep(ctx, out, args):
    cfg = ctx.cfg
    cur = ctx.curve()
    prob = ctx.reduced()

    def admissible(e):
        try:
            RO.check_admissible(prob, e, cfg.c0)
            return True, ""
        except RO.ResonanceError as exc:
            return False, str(exc)

    sched = list(cfg.sweep_eps)
    first = sched[0]
    for e in sched:
        ok, reason = admissible(e)
        if ok:
            first = e
            break

    def init_first(e):
        if cfg.seed_kind == "ansatz":
            return S.radial_profile_from_ansatz(ctx.ansatz(e))
        return S.radial_seed(S.composite_seed(cur, e, ctx.mu_hat0()))

    steps = S.continuation_sweep(cur, sched, init_first, admissible=admissible, force=args.force)
    rows = [(s.eps, int(s.result is not None), s.result.branch_tag if s.result else "", s.eps_mass, s.boundary_max,
             s.interior_error, int(s.admissible), s.note) for s in steps]
    write_csv(os.path.join(out, "sweep.csv"), ["eps", "converged", "branch", "eps_mass", "boundary_max",
                                               "interior_error", "admissible", "note"], rows)
    return [], {"files": ["sweep.csv"], "steps": len(steps), "first_admissible": first}


def cmd_verify(ctx, out, args):
    wanted = sorted(CRITERIA) if not args.only else sorted(set(args.only))
    checks = []
    for k in wanted:
        chk = run_check(k, ctx)
        print(chk.line(), flush=True)
        checks.append(chk)
    write_csv(os.path.join(out, "acceptance.csv"), ["criterion", "name", "passed"],
              [(c.criterion, c.name, c.passed) for c in checks])
    write_json(os.path.join(out, "acceptance.json"), [{"criterion": c.criterion, "name": c.name, "passed": c.passed,
                                                      "value": c.value, "target": c.target, "parts": c.parts,
                                                      "runtime_s": round(c.runtime, 3)} for c in checks])
    return checks, {"files": ["acceptance.csv", "acceptance.json"]}


COMMANDS = {"profile": cmd_profile, "matching": cmd_matching, "ansatz": cmd_ansatz, "resonance": cmd_resonance,
            "solve": cmd_solve, "sweep": cmd_sweep, "verify": cmd_verify}

QUICK = {"residual_eps": [0.05, 0.08, 0.10, 0.12], "resolution": 128}


def _common_flags(parser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="JSON config file (keys as in --print-defaults)", **kw)
    parser.add_argument("--out", help="output directory (overrides the config)", **kw)
    parser.add_argument("--quick", action="store_true", help="smaller sample sets for a faster run", **kw)
    parser.add_argument("--force", action="store_true", help="solve at eps values failing the gap condition", **kw)
    parser.add_argument("--domain", help="'disk' or a JSON domain spec (overrides the config)", **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="condensation", description="Boundary-layer steady states: construction, "
                                "matching, verification.")
    _common_flags(p, suppress=False)
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _common_flags(sp, suppress=True)      # flags may follow the subcommand as well
        if name == "verify":
            sp.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return p


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = ExperimentConfig.from_dict(data)
    if args.quick:
        for k, v in QUICK.items():
            if k not in data:
                setattr(cfg, k, v)
    if args.domain:
        cfg.domain = {"disk": {"radius": 1.0}} if args.domain == "disk" else json.loads(args.domain)
    if args.out:
        cfg.out = args.out
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.print_defaults:
        print(ExperimentConfig().to_json())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        print("condensation: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"condensation: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    ctx = Context(cfg)
    t0 = time.perf_counter()
    try:
        checks, info = COMMANDS[args.command](ctx, out, args)
    except RO.ResonanceError as exc:
        print(f"condensation: refused: {exc} (use --force to solve anyway)", file=sys.stderr)
        return EXIT_FAILED
    except (ValueError, GeometryError, H.MatchingError, S.NewtonError) as exc:
        print(f"condensation: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    if args.command != "verify":
        for c in checks:
            print(c.line())
    summary = {"command": args.command, "config": asdict(cfg), "info": info,
               "checks": [{"criterion": c.criterion, "name": c.name, "passed": c.passed, "value": c.value}
                          for c in checks],
               "runtime_s": round(time.perf_counter() - t0, 3)}
    write_json(os.path.join(out, f"summary_{args.command}.json"), summary)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
