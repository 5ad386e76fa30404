import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mslfv.model import (
    ConfigurationError, GrowthSpec, ModelParams, PopulationField, TypeLedger, ball, ball_sizes,
    default_n_max, growth_eval, local_mean, validate_assumptions,
)


def test_ball_interior_clip():
    assert list(ball(50, ModelParams())) == list(range(46, 55))


def test_ball_boundary_clip():
    assert list(ball(0, ModelParams())) == [0, 1, 2, 3, 4]


def test_ball_wrap():
    b = ball(0, ModelParams(boundary="wrap"))
    assert sorted(b.tolist()) == [0, 1, 2, 3, 4, 97, 98, 99, 100]


def test_ball_sizes_profile():
    p = ModelParams()
    V = ball_sizes(p)
    assert np.all(V[p.R:p.grid_len - p.R] == 2 * p.R + 1)
    assert V[0] == p.R + 1
    assert np.all(np.diff(V[:p.R + 1]) > 0)
    assert np.all(ball_sizes(ModelParams(boundary="wrap")) == 2 * p.R + 1)


def test_local_mean_examples():
    p = ModelParams()
    f = PopulationField.all_uniform(101, 3.0)
    assert local_mean(f, 17, p) == pytest.approx(3.0)
    g = PopulationField.all_uniform(101, 1e-300)
    g.n[:] = 0.0
    g.n[50] = 9.0
    assert local_mean(g, 50, p) == pytest.approx(1.0)
    h = PopulationField.all_uniform(101, 8.0)
    assert local_mean(h, 0, p) == pytest.approx(8.0)


@pytest.mark.parametrize("boundary", ["clip", "wrap"])
def test_local_mean_constant(boundary):
    p = ModelParams(boundary=boundary)
    f = PopulationField.all_uniform(101, 4.25)
    assert all(local_mean(f, x, p) == pytest.approx(4.25, rel=1e-15) for x in range(101))


def test_growth_examples():
    spec = GrowthSpec()
    assert growth_eval(spec, 50, 1.0) == 0.0
    assert growth_eval(spec, 0, 3.0) == 5.0
    assert growth_eval(spec, 50, 10.0) == -1.0


@settings(max_examples=200, deadline=None)
@given(x=st.integers(0, 100), n=st.floats(0, 1e6))
def test_growth_clamp(x, n):
    for spec in (GrowthSpec(), GrowthSpec(family="logistic_const", kappa=8.0)):
        assert growth_eval(spec, x, n) >= -1.0


def test_custom_table_interpolates_and_clamps():
    spec = GrowthSpec.custom([0.0, 10.0], [[2.0, -3.0]] * 5)
    assert growth_eval(spec, 2, 5.0) == pytest.approx(-0.5)
    assert growth_eval(spec, 2, 20.0) == -1.0
    with pytest.raises((ConfigurationError, IndexError, ValueError)):
        growth_eval(spec, 7, 1.0)


def test_default_n_max_valley():
    assert default_n_max(GrowthSpec()) == pytest.approx(1.05 * 20.25, rel=1e-6)


def test_validate_valley_defaults():
    rep = validate_assumptions(GrowthSpec(), ModelParams())
    assert rep.passed
    assert rep.max_post_mass == pytest.approx(20.25, abs=1e-3)
    x, n = rep.argmax_post_mass
    assert x in (0, 100) or abs(x - 50) >= 25
    assert n == pytest.approx(4.5, abs=0.02)


def test_validate_logistic():
    assert validate_assumptions(GrowthSpec(family="logistic_const", kappa=8.0),
                                ModelParams(n_max=20.25 + 1e-6)).passed


def test_validate_fails_low_ceiling():
    rep = validate_assumptions(GrowthSpec(), ModelParams(n_max=10.0))
    assert not rep.passed and rep.violation is not None
    x, n = rep.violation
    assert 0 < n < 10


def test_validate_zero_growth_fails_positivity():
    assert not validate_assumptions(GrowthSpec.zero(101), ModelParams()).passed


@pytest.mark.parametrize("kw", [dict(u=0.0), dict(u=1.0), dict(mu=-1), dict(R=0), dict(n_max=0),
                                dict(grid_len=5), dict(boundary="torus")])
def test_params_validation(kw):
    with pytest.raises(ConfigurationError):
        ModelParams(**kw)


def test_params_constants():
    p = ModelParams()
    assert p.ball_volume == 9
    assert p.diffusion == pytest.approx(0.04 * 9 * 16 / 3)


def test_field_constructors_consistent():
    for f in (PopulationField.all_uniform(11, 3.0), PopulationField.one_type_per_site(11, 3.0),
              PopulationField.monomorphic(11, 3.0)):
        f.check_consistency()
        assert np.allclose(f.n, 3.0)
    f = PopulationField.one_type_per_site(11, 3.0)
    assert f.ledger.n_alive == 11


def test_set_site_and_ledger():
    f = PopulationField.all_uniform(5, 3.0, capacity=4)
    f.set_site(2, {1: 1.0, 3: 0.5}, 1.5)
    assert f.type_masses(2) == {1: 1.0, 3: 0.5}
    assert f.ledger.site_count[1] == 1 and f.ledger.n_alive == 2
    f.set_site(2, {}, 3.0)
    assert f.ledger.n_alive == 0
    f.check_consistency()
    assert isinstance(f.ledger, TypeLedger)
