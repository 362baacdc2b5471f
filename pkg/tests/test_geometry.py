import numpy as np
import pytest

from condensation import geometry as G


def test_disk_data():
    c = G.build_boundary({"disk": {"radius": 2.0}}, 128)
    assert c.ell == pytest.approx(4 * np.pi, rel=1e-13)
    assert np.allclose(c.kappa, 0.5, atol=1e-12)
    assert np.allclose(np.hypot(*c.points.T), 2.0, atol=1e-13)
    # inner normal points to the origin
    assert np.allclose(c.normal, -c.points / 2.0, atol=1e-12)


def test_ellipse_curvature_and_perimeter():
    a, b = 1.3, 0.8
    c = G.build_boundary({"ellipse": {"a": a, "b": b}}, 256)
    x, y = c.points.T
    exact = a * b / ((b * x / a) ** 2 + (a * y / b) ** 2) ** 1.5
    assert np.max(np.abs(c.kappa - exact)) < 1e-9
    from scipy.special import ellipe
    assert c.ell == pytest.approx(4 * a * ellipe(1 - (b / a) ** 2), rel=1e-12)


def test_arclength_parametrization_has_unit_speed(star):
    speed = np.hypot(*star.gamma_dot(star.theta).T)
    assert np.max(np.abs(speed - 1)) < 1e-10


def test_fermi_round_trip(star):
    chart = G.FermiChart(star, 0.2)
    rng = np.random.default_rng(1)
    th = rng.uniform(0, star.ell, 200)
    y = -rng.uniform(0, 0.2, 200)
    th2, y2 = G.cartesian_to_fermi(chart, G.fermi_to_cartesian(chart, th, y))
    dth = np.angle(np.exp(2j * np.pi * (th2 - th) / star.ell)) * star.ell / (2 * np.pi)
    assert np.max(np.abs(dth)) < 1e-10
    assert np.max(np.abs(y2 - y)) < 1e-12


def test_chart_laplacian_matches_cartesian(star):
    """Collar-coordinate Laplacian of f(x, y) against its Cartesian Laplacian."""
    chart = G.FermiChart(star, 0.2)
    y = -np.linspace(0, 0.2, 401)
    th = star.theta
    pts = G.fermi_to_cartesian(chart, np.repeat(th, y.size), np.tile(y, th.size))
    X, Y = pts.T
    f = np.exp(0.7 * X) * np.sin(1.1 * Y) + X**3
    lap = (0.49 - 1.21) * np.exp(0.7 * X) * np.sin(1.1 * Y) + 6 * X
    got = G.chart_laplacian(chart, th, y, f.reshape(th.size, y.size), order=8)
    err = np.abs(got - lap.reshape(th.size, y.size))[:, 5:-5]
    assert np.max(err) < 1e-7


def test_wrong_curvature_sign_is_detected(star):
    chart = G.FermiChart(star, 0.2)
    y = -np.linspace(0, 0.2, 201)
    th = star.theta
    X, Y = G.fermi_to_cartesian(chart, np.repeat(th, y.size), np.tile(y, th.size)).T
    f = (X**2 + Y**2).reshape(th.size, y.size)
    good = G.chart_laplacian(chart, th, y, f, order=8)
    bad = G.chart_laplacian(chart, th, y, f, order=8, curvature_sign=-G.CHART_CURVATURE_SIGN)
    assert np.max(np.abs(good - 4)[:, 5:-5]) < 1e-8
    assert np.max(np.abs(bad - 4)) > 0.1


def test_chart_too_wide_rejected():
    c = G.build_boundary({"disk": {"radius": 1.0}}, 64)
    with pytest.raises(G.GeometryError):
        G.FermiChart(c, 0.6)


@pytest.mark.parametrize("spec", [{"star": {"rho_coefficients": [0.5, 0.7]}}, {"polygon": {}},
                                  {"disk": {"radius": -1.0}}])
def test_invalid_curves_rejected(spec):
    with pytest.raises(G.GeometryError):
        G.build_boundary(spec, 128)


def test_nonsmooth_samples_rejected():
    phi = 2 * np.pi * np.arange(64) / 64
    rho = 1 + 0.2 * np.abs(np.sin(phi))       # corners at phi = 0, pi
    with pytest.raises(G.GeometryError):
        G.build_boundary({"star": {"rho_samples": rho.tolist()}}, 128)
