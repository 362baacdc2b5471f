import numpy as np
import pytest

from condensation import assembly as A
from condensation import reduced_ode as RO
from condensation import solver as S


def test_trivial_roots():
    r = S.trivial_roots(0.2)
    assert r == pytest.approx([0.2591711, 2.5426414], abs=1e-7)
    for u in r:
        assert u == pytest.approx(0.2 * np.exp(u), rel=1e-13)
    assert len(S.trivial_roots(0.5)) == 0


def test_radial_mesh_operators():
    m = S.RadialMesh(1.0, 41)
    r = m.r
    assert np.allclose(m.laplacian @ r**2, 4.0, atol=1e-10)
    assert np.allclose(m.laplacian @ r**4, 16 * r**2, atol=1e-9)
    assert m.integrate(r**2) == pytest.approx(np.pi / 2, rel=1e-13)
    assert m.evaluate(r**4 + 1, np.array([0.3]))[0] == pytest.approx(1.0081, abs=1e-12)


def test_nodes_resolve_layer():
    N = S.RadialMesh.nodes_for(1.0, 0.02)
    m = S.RadialMesh(1.0, N)
    assert np.sum(m.r >= 1 - 0.02) >= 20


def test_constant_state_and_quadratic_convergence():
    lam = 0.2
    res = S.radial_solve(1.0, lam, 2.3, N=41)
    assert np.allclose(res.field, S.trivial_roots(lam)[1], atol=1e-12)
    assert res.branch_tag == "trivial"
    hist = np.asarray(res.residual_history)
    ok = hist[:-1] > 1e-6            # ratios before the rounding floor
    ratios = hist[1:][ok] / hist[:-1][ok] ** 2
    assert np.all(ratios < 10)


def test_lambda_at_least_one_is_infeasible():
    with pytest.raises(S.InfeasibleError):
        S.radial_solve(1.0, 1.0, 0.0)


def test_newton_failure_raises():
    with pytest.raises(S.NewtonError):
        S.radial_solve(1.0, A.lambda_of_eps(0.05), 50.0, N=161, max_iter=3)


@pytest.fixture(scope="module")
def layer05(disk):
    eps = 0.05
    seed = S.composite_seed(disk, eps)
    return eps, seed, S.radial_solve(1.0, A.lambda_of_eps(eps), S.radial_seed(seed))


def test_layer_solution_from_composite_seed(layer05):
    eps, _, res = layer05
    assert res.branch_tag == "layer"
    assert res.newton_iters <= 8
    assert res.extras["identity_relative"] < 1e-10
    assert res.extras["neumann"] < 1e-8
    # most of the mass sits near the boundary
    assert 0.8 < eps * res.mass / 3.9665 < 1.0


def test_2d_matches_radial_on_layer(disk, layer05):
    eps, seed, rad = layer05
    two = S.newton_2d(disk, A.lambda_of_eps(eps), seed, n_phi=16, n_s=48)
    assert two.branch_tag == "layer"
    ref = rad.mesh.evaluate(rad.field, np.hypot(*two.mesh.points.T))
    assert np.max(np.abs(two.field - ref)) < 1e-8
    assert two.extras["identity_relative"] < 1e-9


@pytest.mark.slow
def test_2d_converges_under_refinement(disk, layer05):
    eps, seed, rad = layer05
    errs = []
    for n_s in (12, 16, 20, 24):
        two = S.newton_2d(disk, A.lambda_of_eps(eps), seed, n_phi=16, n_s=n_s)
        ref = rad.mesh.evaluate(rad.field, np.hypot(*two.mesh.points.T))
        errs.append(np.max(np.abs(two.field - ref)))
    hs = 1.0 / np.array([12, 16, 20, 24])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.9
    assert errs[-1] < errs[0]


def test_weak_limit_check_shapes(layer05, disk):
    eps, _, res = layer05
    out = S.weak_limit_check(res, disk, 2.2401937)
    assert [o["phi"] for o in out] == ["one", "x2", "exp_x"]
    assert out[0]["relative"] < 0.1


def test_dump_round_trip(tmp_path):
    a = np.arange(12.0).reshape(3, 4) / 7
    p = tmp_path / "f.bin"
    S.dump_field(p, a)
    b = S.load_field(p)
    assert b.shape == a.shape and np.array_equal(a, b)
    raw = p.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 2


def test_sweep_refuses_resonant_eps(disk, ctx):
    prob = ctx.reduced()

    def admissible(e):
        try:
            RO.check_admissible(prob, e)
            return True, ""
        except RO.ResonanceError as exc:
            return False, str(exc)

    steps = S.continuation_sweep(disk, [0.3156, 0.25], lambda e: S.trivial_roots(A.lambda_of_eps(e))[-1],
                                 admissible=admissible)
    assert steps[0].result is None and steps[0].note.startswith("refused")
    assert steps[1].result is not None


def test_sweep_schedule_must_decrease(disk):
    with pytest.raises(ValueError):
        S.continuation_sweep(disk, [0.1, 0.2], lambda e: 0.0)


def test_classify_branch():
    mask = np.array([True, False, False])
    assert S.classify_branch(np.array([1.0, 1.0, 1.0]), mask) == "trivial"
    assert S.classify_branch(np.array([5.0, 1.0, 0.5]), mask) == "layer"
    assert S.classify_branch(np.array([1.0, 5.0, 0.5]), mask) == "spike"
