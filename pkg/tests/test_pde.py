import numpy as np
import pytest

from mslfv.model import ConfigurationError, GrowthSpec, ModelParams
from mslfv.pde import (
    InstabilityError, PdeConfig, evolve_deterministic_m, evolve_reaction_diffusion, read_profile,
    stable_dt, stationarity_residual, steady_state, write_profile,
)


def test_stable_dt_value():
    assert stable_dt(ModelParams()) == pytest.approx(0.9 / (2 * 1.92))


def test_dt_above_bound_rejected():
    with pytest.raises(ConfigurationError):
        PdeConfig(dt=1.0).resolve_dt(ModelParams())


def test_flat_fixed_point():
    spec = GrowthSpec(family="logistic_const", kappa=8.0)
    ss = steady_state(spec, ModelParams(n_max=21.0))
    assert ss.converged
    assert np.max(np.abs(ss.profile - 8.0)) < 1e-8


def test_valley_steady_state_properties():
    ss = steady_state(GrowthSpec(), ModelParams())
    p = ss.profile
    assert ss.converged and ss.residual < 1e-9
    assert np.max(np.abs(p - p[::-1])) < 1e-8
    assert p[50] < 2.0 and p[0] == 8.0
    # the end sites are pinned; the interior relaxes towards the plateau
    assert abs(p[10] - 8.0) < 1e-8


def test_residual_definition():
    ss = steady_state(GrowthSpec(), ModelParams())
    cfg = PdeConfig()
    p = ss.profile
    D = ModelParams().diffusion
    spec = GrowthSpec()
    direct = max(abs(D * (p[i + 1] + p[i - 1] - 2 * p[i]) + spec.evaluate(i, p[i]) * p[i]) for i in range(1, 100))
    assert stationarity_residual(p, spec, ModelParams(), cfg) == pytest.approx(direct, rel=1e-12)


def test_reaction_scale_option_changes_profile():
    a = steady_state(GrowthSpec(), ModelParams()).profile
    b = steady_state(GrowthSpec(), ModelParams(), PdeConfig(reaction_scale="with_uVR")).profile
    assert np.max(np.abs(a - b)) > 0.1
    with pytest.raises(ConfigurationError):
        PdeConfig(reaction_scale="neither")


def test_evolve_reaches_steady_state():
    spec, p = GrowthSpec(), ModelParams()
    ss = steady_state(spec, p)
    traj = evolve_reaction_diffusion(np.full(101, 3.0), spec, p, PdeConfig(), T=200.0, save_every=50.0)
    assert np.max(np.abs(traj.final - ss.profile)) < 1e-6
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(200.0)
    mid = traj.at(75.0)
    assert mid.shape == (101,)


def test_instability_detected():
    spec, p = GrowthSpec(), ModelParams()
    cfg = PdeConfig()
    cfg.resolve_dt = lambda params: 3.0  # force an unstable step
    with pytest.raises(InstabilityError):
        evolve_reaction_diffusion(np.full(101, 3.0) + np.random.default_rng(0).random(101), spec, p, cfg, T=60.0)


def test_deterministic_m_tracks_pde_at_delta_one():
    spec, p = GrowthSpec(), ModelParams()
    traj = evolve_deterministic_m(np.full(101, 3.0), spec, p, delta=1.0, T=40.0)
    m = traj.final
    assert m.min() > 0 and m.max() < p.n_max
    assert m[50] < m[5]


def test_profile_io(tmp_path):
    prof = np.linspace(1, 2, 7) / 3
    write_profile(tmp_path / "p.csv", prof, {"a": 1})
    assert np.array_equal(read_profile(tmp_path / "p.csv"), prof)
