import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condensation import corrections as C
from condensation import profile1d as P

SQ2 = np.sqrt(2.0)


@pytest.fixture(scope="module")
def prof():
    return P.line_profile(40, 0.02)


def forcing(c):
    return lambda t: c[0] + c[1] * np.sin(c[2] * t) + c[3] * np.exp(np.minimum(t, 0.0))


def test_constant_forcing_slope(prof):
    sol = C.solve_halfline(np.ones_like(prof.grid), prof)
    assert float(sol.a_coef) == pytest.approx(1 / SQ2, abs=1e-10)
    # measured far-field slope and offset agree with the quadratures
    assert float(sol.a_measured) == pytest.approx(float(sol.a_coef), abs=1e-9)
    assert float(sol.b_measured) == pytest.approx(float(sol.b_coef), abs=1e-8)


def test_matches_shooting_and_bvp(prof):
    h = forcing([0.3, -0.7, 1.3, 0.5])
    sol = C.solve_halfline(h(prof.grid), prof)
    sel = prof.grid >= -20
    shoot = C.halfline_shooting(h)(prof.grid[sel])
    bvp = C.halfline_reference(h, float(sol.b_coef))(prof.grid[sel])
    assert np.max(np.abs(sol.U[sel] - shoot)) < 1e-8
    assert np.max(np.abs(sol.U[sel] - bvp)) < 1e-7


def test_published_offset_kernel_shift(prof):
    """The displayed offset kernel differs from the true one by -2 sqrt2 times the slope."""
    h = forcing([1.0, 0.4, 0.8, -0.2])(prof.grid)
    sol = C.solve_halfline(h, prof)
    assert float(sol.b_coef_published) == pytest.approx(float(sol.b_coef - 2 * SQ2 * sol.a_coef), abs=1e-10)
    assert abs(float(sol.b_coef_published - sol.b_measured)) > 0.1


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-3, 3))
def test_solution_operator_is_linear(coefs, scale):
    prof = P.line_profile(40, 0.05)
    c = [coefs[0], coefs[1], abs(coefs[2]) + 0.1, coefs[3]]
    h1 = forcing(c)(prof.grid)
    h2 = np.cos(prof.grid)
    s = C.solve_halfline(np.stack([h1, h2, h1 + scale * h2]), prof)
    assert np.allclose(s.U[2], s.U[0] + scale * s.U[1], atol=1e-9)
    assert np.allclose(s.a_coef[2], s.a_coef[0] + scale * s.a_coef[1], atol=1e-11)


def test_residual_small_on_interior(prof):
    h = forcing([0.2, 1.0, 0.6, 1.0])(prof.grid)
    sol = C.solve_halfline(h, prof)
    assert np.max(np.abs(sol.residual(h, prof))[:-10]) < 1e-8


def test_exponential_growth_rejected(prof):
    with pytest.raises(C.QuadratureError):
        C.solve_halfline(np.exp(-2 * prof.grid), prof)


def test_wrong_grid_rejected(prof):
    with pytest.raises(ValueError):
        C.solve_halfline(np.ones(7), prof)


@pytest.mark.parametrize("which", ["disk", "star"])
def test_nu1_closed_form_matches_quadrature(ctx, which):
    key = "domain" if which == "disk" else "star_domain"
    cs = C.compute_corrections(ctx.curve(key), ctx.mu_hat0(key), ctx.profile)
    assert np.max(np.abs(cs.nu1 - cs.nu1_quadrature)) < 1e-8


def test_disk_corrections_are_constant(ctx):
    cs = C.compute_corrections(ctx.curve(), ctx.mu_hat0(), ctx.profile)
    for arr in (cs.nu1, cs.nu2, cs.zeta1, cs.zeta2):
        assert np.ptp(arr) < 1e-9 * max(1.0, np.max(np.abs(arr)))


def test_hooks_offset_kernel_switch(ctx):
    mu = ctx.mu_hat0("star_domain")
    true = C.matching_hooks(ctx.curve("star_domain"), ctx.profile, "true")(mu)
    pub = C.matching_hooks(ctx.curve("star_domain"), ctx.profile, "published")(mu)
    assert np.allclose(true[1], pub[1])
    assert not np.allclose(true[0], pub[0])


@pytest.mark.slow
def test_first_order_correction_sign_against_radial_layer(disk):
    """Near r = 1 a converged disk layer solution departs from the dilated bubble
    by mu * alpha1(t); the chart curvature gives the closer first-order term."""
    from condensation import assembly as A, solver as S
    prof = P.line_profile()
    eps = 0.02
    lam = A.lambda_of_eps(eps)
    res = S.radial_solve(1.0, lam, S.radial_seed(S.composite_seed(disk, eps)))
    mu_hat = np.exp((SQ2 / eps - res.field[0] - np.log(4)) / 2)
    mu = eps * mu_hat
    sel = prof.grid >= -4
    t = prof.grid[sel]
    u = res.mesh.evaluate(res.field, 1 + mu * t)
    diff = u - (P.bubble(t)[0] - 2 * np.log(mu) - np.log(lam))
    W1 = C._primitives(prof).W1[sel]
    err = {k: np.max(np.abs(diff - mu * (k * W1 + SQ2 / 2 * mu_hat * t**2))) for k in (1.0, -1.0)}
    k_chart = float(np.mean(C.chart_curvature(disk)))
    assert err[k_chart] < 0.5 * err[-k_chart]


def test_alpha_expansion_rate(ctx):
    cur, mu0, prof = ctx.curve("star_domain"), ctx.mu_hat0("star_domain"), ctx.profile
    at = C.alpha_terms(cur, mu0, profile=prof)
    td = C.theta_data(cur, mu0)
    eps_values = [0.1, 0.05, 0.025, 0.0125]
    errs = []
    for eps in eps_values:
        mu = eps * mu0
        n = int(np.searchsorted(-prof.grid, 2 * eps ** (27 / 28) / mu.min())) + 1
        t = prof.grid[:n]
        err = 0.0
        for i in range(0, cur.n, 32):
            exact = C.alpha_mu_exact(td, eps, mu[i] * t)[i]
            err = max(err, np.max(np.abs(exact - mu[i] * at.alpha1[i, :n] - mu[i] ** 2 * at.alpha2[i, :n])))
        errs.append(err)
    assert np.polyfit(np.log(eps_values), np.log(errs), 1)[0] >= 2.7
