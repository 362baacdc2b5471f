import numpy as np
import pytest

from condensation import assembly as A


@pytest.mark.parametrize("eps", [0.02, 0.1, 0.3, 0.5])
def test_eps_lambda_round_trip(eps):
    lam = A.lambda_of_eps(eps)
    assert A.eps_lambda_convert(lam=lam) == pytest.approx(eps, rel=1e-13)


def test_known_conversions():
    assert A.lambda_of_eps(0.1) == pytest.approx(2.885e-4, rel=1e-3)
    assert A.eps_lambda_convert(lam=1e-5) == pytest.approx(0.0786, abs=1e-4)


@pytest.mark.parametrize("lam", [1.0, 2.0, 0.0, -1e-3])
def test_out_of_range_lambda(lam):
    with pytest.raises(ValueError):
        A.eps_lambda_convert(lam=lam)


def test_lambda_above_one_has_no_eps():
    assert A.lambda_of_eps(0.6) > 1
    with pytest.raises(ValueError):
        A.eps_lambda_convert(lam=float(A.lambda_of_eps(0.6)))


def test_params_validation():
    A.AnsatzParams.from_eps(0.1)
    with pytest.raises(ValueError):
        A.AnsatzParams.from_eps(0.1, a=0.9)
    with pytest.raises(ValueError):
        A.AnsatzParams.from_eps(0.1, sigma=1.0)
    with pytest.raises(ValueError):
        A.AnsatzParams(eps=0.1, lam=1e-3)


def test_cutoff_shape():
    d = 0.3
    y = -np.linspace(0, 3 * d, 3001)
    eta = A.cutoff(y, d)
    assert np.all(eta[-y <= d] == 1.0)
    assert np.all(eta[-y >= 2 * d] == 0.0)
    assert np.all(np.diff(eta) <= 0)
    d1, d2 = A.cutoff_derivative_bounds(d)
    # reported as max|eta'| delta and max|eta''| delta^2
    assert d1 == pytest.approx(2.0, rel=1e-6)
    assert d2 == pytest.approx(9.841, rel=1e-3)
    assert np.max(np.abs(np.gradient(eta, y))) * d == pytest.approx(2.0, rel=1e-2)


@pytest.fixture(scope="module")
def field01(ctx):
    return ctx.ansatz(0.1)


@pytest.mark.slow
def test_collar_neumann_and_layer_value(field01):
    f = field01
    assert f.diagnostics["neumann_defect"] < 1e-8
    lead = f.components["lead"][:, 0]
    assert np.allclose(lead, -2 * np.log(f.mu) - np.log(f.params.lam), atol=1e-12)


@pytest.mark.slow
def test_blending_is_exact_outside_transition(field01):
    f = field01
    eta = f.cutoff_collar
    assert np.array_equal(f.global_collar[eta == 1.0], f.collar[eta == 1.0])
    assert np.array_equal(f.global_collar[eta == 0.0], f.interior_collar[eta == 0.0])
    mesh_eta = f.cutoff
    assert np.array_equal(f.global_field[mesh_eta == 0.0], f.interior[mesh_eta == 0.0])


@pytest.mark.slow
def test_pointwise_evaluation_matches_mesh_field(field01):
    f = field01
    assert np.max(np.abs(f.evaluate(f.mesh.points) - f.global_field)) < 1e-10


@pytest.mark.slow
def test_residual_report(field01):
    rep = A.residual(field01)
    assert np.isfinite(rep.sup_interior) and np.isfinite(rep.norm_star_star)
    assert rep.c_proj_max == np.max(np.abs(A.project_Z0(rep.R, field01)))
    # without an e0 correction there is no carrier term to subtract
    assert rep.norm_star_star == rep.norm_star_star_raw
    d = __import__("json").loads(rep.to_json())
    assert set(d) == {"eps", "lambda", "sup_interior", "norm_star_star", "c_proj_max"}


@pytest.mark.slow
def test_e0_update_reduces_projection(ctx):
    eps = 0.08
    m = ctx.matching(eps)
    upd, _, _ = A.e0_sweep(ctx.curve(), m, ctx.corrections(m), A.AnsatzParams.from_eps(eps), ctx.eigenpair)
    assert upd.reduction >= 2


@pytest.mark.slow
def test_layer_mass_near_limit(field01):
    mass = A.ansatz_mass(field01)
    assert abs(mass["eps_layer"] / mass["limit"] - 1) < 0.15
    assert mass["total"] > mass["layer"] > 0


def test_mismatched_inputs_rejected(ctx):
    m = ctx.matching(0.1)
    cs = ctx.corrections(m)
    with pytest.raises(A.AssemblyError):
        A.assemble(ctx.curve(), m, cs, A.AnsatzParams.from_eps(0.08))


@pytest.mark.slow
def test_projection_responds_linearly_to_constant_e0(ctx, field01):
    eps = 0.1
    m = ctx.matching(eps)
    cs = ctx.corrections(m)
    base = A.residual(field01).c_proj
    shifts = []
    for amp in (1.0, 2.0):
        f = A.assemble(ctx.curve(), m, cs, A.AnsatzParams.from_eps(eps, e0=amp), ctx.eigenpair)
        shifts.append(np.mean(A.residual(f).c_proj - base))
    assert shifts[1] == pytest.approx(2 * shifts[0], rel=0.05)
    # half-line prediction 1/2 Lambda1 eps^{3/2}; the finite collar window keeps only part of it
    ratio = shifts[0] / (0.5 * ctx.eigenpair.lambda1 * eps**1.5)
    assert 0.25 < ratio < 1.0
