import subprocess
import sys

import numpy as np
import pytest

from mslfv import cli, harness
from mslfv.analysis import IdentityTable, replicate_stats
from mslfv.config import DESK_REPLICATES, ExperimentConfig
from mslfv.model import ConfigurationError
from mslfv.pde import read_profile
from mslfv.simulate import read_snapshot

FAST = ["--set", "analysis.replicates=3", "--set", "sim.T_end=4", "--set", "analysis.refs=[45, 50]"]


def test_defaults_and_preset():
    cfg = ExperimentConfig()
    assert cfg.analysis.replicates == 2000 and cfg.analysis.refs == [45, 60, 75]
    assert cfg.params().n_max == pytest.approx(1.05 * 20.25, rel=1e-6)
    desk = ExperimentConfig.load(preset="desk")
    assert desk.analysis.replicates == DESK_REPLICATES and desk.sim.T_end == 125.0


def test_toml_and_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[model]\nu = 0.02\n[sim]\nT_end = 10.0\n[io]\nout_dir = "x"\n')
    cfg = ExperimentConfig.load(p, ["sim.T_end=12", "model.boundary=wrap"])
    assert cfg.model.u == 0.02 and cfg.sim.T_end == 12 and cfg.model.boundary == "wrap"


@pytest.mark.parametrize("text", ["[model]\nfoo = 1\n", "[nope]\nx = 1\n", "[predict]\nt_max = 0\n",
                                  "[analysis]\nreplicates = 0\n", "[model]\nn_max = 10.0\n",
                                  "[analysis]\nrefs = [200]\n"])
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigurationError):
        ExperimentConfig.load(p)


def test_hash_ignores_workers():
    a = ExperimentConfig.load(overrides=["rng.workers=1"])
    b = ExperimentConfig.load(overrides=["rng.workers=4"])
    c = ExperimentConfig.load(overrides=["rng.seed=5"])
    assert a.hash() == b.hash() != c.hash()


def test_simulate_T0_equals_initial_state(tmp_path):
    cfg = ExperimentConfig.load(overrides=["analysis.replicates=1", "sim.T_end=0", "io.write_snapshots=true"])
    harness.cmd_simulate(cfg, tmp_path, workers=1)
    rows = harness.read_csv(tmp_path / "profile_sim.csv")
    assert all(float(r["mass"]) == 3.0 for r in rows)
    f, t, _ = read_snapshot(tmp_path / "snapshots" / "rep00000_final.csv")
    assert t == 0.0 and np.all(f.uniform == 3.0)


def test_determinism_across_workers(tmp_path):
    outs = []
    for j in ("1", "2"):
        d = tmp_path / f"w{j}"
        assert cli.main(["simulate", "-o", str(d), "-j", j] + FAST) == 0
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]
    for content in outs[0].values():
        assert content.startswith(b"# mslfv ") and b"config_sha256=" in content.splitlines()[0]


def test_predict_flat_growth(tmp_path):
    rc = cli.main(["predict", "-o", str(tmp_path), "--set", 'model.growth="logistic_const"',
                   "--set", "model.kappa=8.0"])
    assert rc == 0
    assert np.max(np.abs(read_profile(tmp_path / "profile_steady.csv") - 8.0)) < 1e-8
    theta = np.loadtxt(tmp_path / "theta.csv", delimiter=",", skiprows=2)[:, 1:]
    assert np.array_equal(theta, theta.T)


def test_predict_rejects_t_max_zero(tmp_path):
    assert cli.main(["predict", "-o", str(tmp_path), "--set", "predict.t_max=0"]) == 1


def test_compare_self_comparison():
    rng = np.random.default_rng(0)
    sim = replicate_stats(rng.random((50, 2, 101)) * 0.01 + 0.01, [45, 60])
    rows, s = harness.compare_tables(sim, sim.mean * 2.8, 2.8, 1.0, 20)
    assert s.coverage == 1.0 and s.N_star == pytest.approx(2.8)


def test_compare_single_replicate_is_na():
    sim = replicate_stats(np.full((1, 1, 101), 0.1), [45])
    rows, s = harness.compare_tables(sim, np.full((1, 101), 0.28), 2.8, 1.0, 20)
    assert s.coverage is None and rows[0][-1] is None


def test_compare_grid_mismatch():
    sim = replicate_stats(np.full((3, 1, 101), 0.1), [45])
    with pytest.raises(ConfigurationError):
        harness.compare_tables(sim, np.ones((1, 50)), 2.8, 1.0, 20)


def test_full_pipeline_cli(tmp_path):
    assert cli.main(["simulate", "-o", str(tmp_path), "-j", "1"] + FAST) == 0
    assert cli.main(["predict", "-o", str(tmp_path)] + FAST) == 0
    assert cli.main(["compare", "-o", str(tmp_path)] + FAST) == 0
    text = (tmp_path / "comparison.csv").read_text().splitlines()
    assert text[2].split(",")[:3] == ["ref_site", "x", "in_window"]
    assert IdentityTable.read(tmp_path / "identity_sim.csv").n_replicates == 3


def test_compare_reference_mismatch(tmp_path):
    assert cli.main(["simulate", "-o", str(tmp_path), "-j", "1"] + FAST) == 0
    assert cli.main(["predict", "-o", str(tmp_path)]) == 0  # default refs
    assert cli.main(["compare", "-o", str(tmp_path)] + FAST) == 1


def test_steady_state_command(tmp_path):
    assert cli.main(["steady-state", "-o", str(tmp_path)]) == 0
    head = (tmp_path / "profile_steady.csv").read_text().splitlines()[0]
    assert "converged=True" in head


def test_runtime_fault_exit_code(tmp_path, monkeypatch):
    from mslfv.simulate import AssumptionBreach

    def boom(*a, **k):
        raise AssumptionBreach("site 3 exceeded n_max")
    monkeypatch.setattr(harness, "cmd_simulate", boom)
    assert cli.main(["simulate", "-o", str(tmp_path)]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "mslfv.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "mslfv" in out.stdout


def test_diagnostics_quick(tmp_path):
    rc = cli.main(["diagnostics", "-o", str(tmp_path), "--set", "analysis.qv_replicates=200"])
    assert rc == 0
    rows = {r["quantity"]: float(r["value"]) for r in harness.read_csv(tmp_path / "diagnostics.csv")}
    assert 1.8 <= rows["jump_convergence_slope"] <= 2.2
    assert rows["flat_generator_residual"] < 1e-12
    assert 0.7 <= rows["qv_ratio"] <= 1.3
