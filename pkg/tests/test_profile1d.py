import numpy as np
import pytest

from condensation import profile1d as P
from condensation.spectral import fd_derivative_uniform

SQ2 = np.sqrt(2.0)


def test_bubble_solves_liouville_ode():
    t = np.linspace(-15, 15, 3001)
    h = t[1] - t[0]
    w, wp, ew = P.bubble(t)
    wpp = fd_derivative_uniform(w, h, 2, order=8)
    assert np.max(np.abs(wpp + ew)[10:-10]) < 1e-9
    assert np.max(np.abs(fd_derivative_uniform(w, h, 1, order=8) - wp)[10:-10]) < 1e-10


def test_bubble_normalization_and_asymptotes():
    w, wp, _ = P.bubble(np.array([0.0, -60.0, 60.0, -1e6]))
    assert w[0] == pytest.approx(0.0, abs=1e-15)
    assert wp[0] == 0.0
    assert w[1] == pytest.approx(-SQ2 * 60 + np.log(4), abs=1e-12)
    assert w[1] == w[2]
    assert np.isfinite(w[3])


def test_kernel_elements_annihilated():
    t = np.linspace(-20, 0, 2001)
    h = t[1] - t[0]
    _, _, ew = P.bubble(t)
    for z in P.kernel_elements(t):
        zpp = fd_derivative_uniform(z, h, 2, order=8)
        assert np.max(np.abs(zpp + ew * z)[10:-10]) < 1e-8


def test_eigenpair_matches_closed_form():
    ep = P.principal_eigenpair()
    assert ep.lambda1 == pytest.approx(0.5, abs=1e-6)
    exact = (2 * SQ2) ** -0.5 / np.cosh(ep.grid / SQ2)
    assert np.max(np.abs(ep.Z0 - exact)) < 1e-6
    assert np.all(ep.Z0 >= 0)
    assert ep.z0_at(np.array([50.0]))[0] == 0.0


def test_eigenpair_extrapolation_improves():
    raw = P.principal_eigenpair(extrapolate=False)
    ext = P.principal_eigenpair()
    assert abs(ext.lambda1 - 0.5) < 0.01 * abs(raw.lambda1 - 0.5)


@pytest.mark.parametrize("kw", [{"T": 20.0}, {"h": 0.1}])
def test_eigenpair_rejects_coarse_settings(kw):
    with pytest.raises(ValueError):
        P.principal_eigenpair(**kw)


def test_line_profile_grid_orientation():
    prof = P.line_profile(40, 0.02)
    assert prof.grid[0] == 0 and prof.grid[-1] == pytest.approx(-40)
    assert np.all(np.diff(prof.grid) < 0)


def test_w_mu_rejects_nonpositive_mu():
    with pytest.raises(ValueError):
        P.w_mu(np.zeros(3), 0.0)
