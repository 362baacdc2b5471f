import numpy as np
import pytest
from scipy.special import iv

from condensation import harmonic as H


def test_disk_helmholtz_modes(disk):
    """U = I_k(r) cos(k phi) / I_k(1) solves -Delta U + U = 0 with boundary data cos(k phi)."""
    phi = np.arctan2(disk.points[:, 1], disk.points[:, 0])
    for k in (0, 1, 3):
        fld = H.solve_dirichlet(disk, np.cos(k * phi), 64, 16)
        x, y = fld.mesh.points.T
        r, ph = np.hypot(x, y), np.arctan2(y, x)
        exact = iv(k, r) * np.cos(k * ph) / iv(k, 1.0)
        assert np.max(np.abs(fld.values - exact)) < 1e-11
        dn_exact = -(0.5 * (iv(k - 1, 1.0) + iv(k + 1, 1.0)) / iv(k, 1.0)) * np.cos(k * phi)
        assert np.max(np.abs(fld.normal_derivative - dn_exact)) < 1e-9


def test_star_plane_wave(star):
    """exp(0.6 x + 0.8 y) is an exact solution on any domain."""
    x, y = star.points.T
    fld = H.solve_dirichlet(star, np.exp(0.6 * x + 0.8 * y), 64, 24)
    X, Y = fld.mesh.points.T
    assert np.max(np.abs(fld.values - np.exp(0.6 * X + 0.8 * Y))) < 1e-9
    grad = np.stack([0.6, 0.8]) [None, :] * np.exp(0.6 * x + 0.8 * y)[:, None]
    dn = np.sum(grad * star.normal, axis=1)
    assert np.max(np.abs(fld.normal_derivative - dn)) < 1e-7


def test_mu_hat0_disk_closed_form(disk):
    assert np.allclose(H.mu_hat_0(disk), iv(0, 1.0) / iv(1, 1.0), atol=1e-12)


def test_mesh_quadrature_area(star):
    m = H.SpectralMesh(star, 64, 24)
    # rho = 1 + 0.15 cos(phi): area = pi (1 + 0.15^2 / 2)
    assert m.integrate(np.ones(m.n)) == pytest.approx(np.pi * (1 + 0.15**2 / 2), rel=1e-12)


def test_evaluate_interpolates_field(star):
    x, y = star.points.T
    fld = H.solve_dirichlet(star, np.exp(0.6 * x + 0.8 * y), 64, 24)
    pts = np.array([[0.1, 0.2], [-0.5, 0.3], [0.0, -0.7]])
    assert np.allclose(fld.evaluate(pts), np.exp(pts @ [0.6, 0.8]), atol=1e-9)


@pytest.mark.slow
def test_matching_converges_and_approaches_mu0(ctx):
    res = ctx.matching(0.05)
    assert res.residual < 1e-10 and res.iterations <= 8
    assert np.allclose(res.mu_hat, np.mean(res.mu_hat), atol=1e-10)
    assert abs(np.mean(res.mu_hat) - np.mean(ctx.mu_hat0())) < 4 * 0.05


@pytest.mark.slow
def test_matching_star_domain(ctx):
    res = ctx.matching(0.06, "star_domain")
    assert res.residual < 1e-10
    mu0 = ctx.mu_hat0("star_domain")
    assert np.max(np.abs(res.mu_hat - mu0)) < 4 * 0.06


@pytest.mark.slow
def test_variants_against_radial_oracle(ctx):
    """On the disk, the effective concentration read off a converged radial layer
    solution tracks the rederived matching at first order in eps."""
    from condensation import assembly as A, solver as S
    eps = 0.02
    R = 1.0
    res = S.radial_solve(R, A.lambda_of_eps(eps), S.radial_seed(S.composite_seed(ctx.curve(), eps)))
    assert res.branch_tag == "layer"
    mu_eff = np.exp((np.sqrt(2) / eps - res.field[0] - np.log(4)) / 2)
    pub = np.mean(ctx.matching(eps, variant="published").mu_hat)
    red = np.mean(ctx.matching(eps, variant="rederived").mu_hat)
    mu0 = np.mean(ctx.mu_hat0())
    assert abs(red - mu_eff) < abs(pub - mu_eff)
    assert np.sign(red - mu0) == np.sign(mu_eff - mu0)


def test_unknown_variant_rejected(ctx):
    with pytest.raises(ValueError):
        H.solve_matching(ctx.curve(), 0.05, ctx.hooks(), variant="other")
