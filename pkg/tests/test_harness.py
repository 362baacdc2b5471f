import json
import subprocess
import sys

import numpy as np
import pytest

from condensation import harness as Hn


def test_config_round_trip():
    cfg = Hn.ExperimentConfig()
    again = Hn.ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg


@pytest.mark.parametrize("patch", [{"eps_list": [0.8]}, {"a": 0.5}, {"variant": "x"}, {"nonsense": 1},
                                   {"resolution": 63}, {"lambda_list": [1.5]}])
def test_invalid_config_rejected(patch):
    d = json.loads(Hn.ExperimentConfig().to_json())
    d.update(patch)
    with pytest.raises(ValueError):
        Hn.ExperimentConfig.from_dict(d)


def test_rate_fit_power():
    eps = np.array([0.02, 0.04, 0.06, 0.08, 0.1])
    fit = Hn.rate_fit(eps, 3.0 * eps**2.5)
    assert fit.exponent == pytest.approx(2.5, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-10)
    assert fit.misfit < 1e-12


def test_rate_fit_exponential():
    eps = np.array([0.05, 0.06, 0.08, 0.1, 0.12])
    fit = Hn.rate_fit(eps, 7 * np.exp(-0.4 / eps), kind="exponential")
    assert fit.exponent == pytest.approx(0.4, abs=1e-10)


def test_rate_fit_confidence_covers_noise():
    rng = np.random.default_rng(3)
    eps = np.linspace(0.02, 0.1, 8)
    fit = Hn.rate_fit(eps, eps * np.exp(0.01 * rng.standard_normal(8)))
    assert abs(fit.exponent - 1) < fit.confidence + 0.05
    assert fit.confidence > 0


@pytest.mark.parametrize("vals", [[1, 2, 3], [1, -1, 2, 3]])
def test_rate_fit_rejects_bad_input(vals):
    with pytest.raises(ValueError):
        Hn.rate_fit(np.arange(1, len(vals) + 1) / 10, vals)


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "condensation", *args], capture_output=True, text=True)


def test_print_defaults():
    p = run_cli("--print-defaults")
    assert p.returncode == 0
    assert Hn.ExperimentConfig.from_json(p.stdout) == Hn.ExperimentConfig()


def test_unknown_subcommand_exit_code():
    assert run_cli("frobnicate").returncode == 2


def test_missing_subcommand_exit_code():
    assert run_cli().returncode == 2


def test_invalid_config_file(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"a": 2.0}))
    p = run_cli("profile", "--config", str(cfgp), "--out", str(tmp_path))
    assert p.returncode == 2 and "invalid config" in p.stderr


def test_solve_refuses_band_center(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"solve_eps": 0.3156}))
    p = run_cli("solve", "--config", str(cfgp), "--out", str(tmp_path))
    assert p.returncode == 1 and "refused" in p.stderr


def test_profile_subcommand(tmp_path):
    p = run_cli("profile", "--out", str(tmp_path))
    assert p.returncode == 0, p.stderr
    assert "PASS" in p.stdout
    summary = json.loads((tmp_path / "summary_profile.json").read_text())
    assert summary["checks"][0]["passed"]


def test_resonance_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run_cli("resonance", "--out", str(d)).returncode == 0
    for name in ("gap_scan.csv", "spectrum.csv", "forbidden_bands.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_solve_writes_field(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"solve_eps": 0.2, "seed_kind": "composite"}))
    p = run_cli("solve", "--config", str(cfgp), "--out", str(tmp_path))
    assert p.returncode == 0, p.stderr
    from condensation.solver import load_field
    u = load_field(tmp_path / "field.bin")
    info = json.loads((tmp_path / "solve.json").read_text())
    assert u.ndim == 1 and info["converged"]


def test_random_forcings_are_seeded():
    t = np.linspace(-5, 0, 11)
    a = [h(t) for h in Hn.random_forcings(7)]
    b = [h(t) for h in Hn.random_forcings(7)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sweep_subcommand(tmp_path):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps({"sweep_eps": [0.2, 0.15, 0.12], "seed_kind": "composite"}))
    p = run_cli("sweep", "--config", str(cfgp), "--out", str(tmp_path))
    assert p.returncode == 0, p.stderr
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("eps,converged") and len(lines) == 4
