import numpy as np
import pytest

from condensation import reduced_ode as RO


@pytest.fixture(scope="module")
def flat():
    return RO.reduced_from_samples(2 * np.pi, np.ones(128))


@pytest.fixture(scope="module")
def generic():
    n = 128
    th = 2 * np.pi * np.arange(n) / n
    return RO.reduced_from_samples(2 * np.pi, np.exp(0.3 * np.sin(th) + 0.1 * np.cos(2 * th)), 0.2 * np.cos(th))


def test_flat_spectrum(flat):
    sp = RO.periodic_spectrum(flat, 16)
    assert np.max(np.abs(sp.nu - 4 * np.arange(17) ** 2)) < 1e-8
    assert sp.max_imag < 1e-10


def test_spectral_and_dense_solves_agree(generic):
    th = generic.theta
    f = np.exp(np.sin(th)) + 0.3 * np.cos(3 * th)
    eps = 0.093
    RO.check_admissible(generic, eps)
    sol = RO.solve_reduced(generic, eps, f)
    dense = RO.dense_reduced_solve(generic, eps, f)
    assert np.max(np.abs(sol.x - dense)) < 1e-9 * np.max(np.abs(dense))
    assert sol.residual < 1e-9


def test_band_centers_flat(flat):
    lam = flat.lambda_p0
    for m, lo, hi in RO.forbidden_bands(flat, 0.05, 0.5):
        center = np.sqrt(lam) / (2 * np.pi * m)
        assert lo < center < hi
        assert 0.5 * (lo + hi) == pytest.approx(center, rel=1e-3)


def test_band_center_refused(flat):
    m, lo, hi = RO.forbidden_bands(flat, 0.05, 0.5)[-1]
    with pytest.raises(RO.ResonanceError) as info:
        RO.solve_reduced(flat, 0.5 * (lo + hi), np.ones(flat.theta.size))
    assert str(m) in str(info.value)


def test_gap_scan_flags_bands(generic):
    eps = np.linspace(0.05, 0.4, 701)
    rep = RO.gap_scan(generic, eps)
    inside = np.zeros(eps.size, bool)
    for _, lo, hi in rep.forbidden_bands:
        inside |= (eps >= lo) & (eps <= hi)
    # the scan's admissibility flags and the band intervals describe the same set
    assert np.mean(inside == ~rep.admissible) > 0.99


def test_resonance_blowup_inverse_distance(generic):
    f, _ = RO.eigenmode_forcing(generic, 2)
    sw = RO.resonance_sweep(generic, 1, f, [1e-5, 1e-6, 1e-7])
    prod = sw["sup"] * sw["distance"]
    assert np.ptp(prod) < 1e-3 * prod.mean()


def test_bound_ratio_stays_bounded(generic):
    th = generic.theta
    f = np.exp(np.cos(th) + 0.4 * np.sin(2 * th))
    ratios = []
    for e in (0.1, 0.05, 0.025, 0.0125):
        while RO.gap_margin(generic, e).min() < 0.1:
            e *= 1.0005
        ratios.append(RO.solve_reduced(generic, e, f).bound_ratio)
    assert max(ratios) < 20


def test_generic_sqrt_defect_decays(generic):
    sp = RO.periodic_spectrum(generic, 16)
    d = np.abs(sp.sqrt_defect[4:])
    assert d[-1] < d[0]


def test_export_csv_round_trip(tmp_path, flat):
    rep = RO.gap_scan(flat, np.linspace(0.1, 0.2, 11))
    p = tmp_path / "scan.csv"
    RO.export_scan_csv(p, rep)
    rows = p.read_text().splitlines()
    assert len(rows) == 12
    p2 = tmp_path / "scan2.csv"
    RO.export_scan_csv(p2, rep)
    assert p.read_bytes() == p2.read_bytes()
