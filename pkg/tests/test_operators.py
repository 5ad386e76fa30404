import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mslfv.model import GrowthSpec, ModelParams
from mslfv.operators import (
    apply_growth_operator, apply_jump_operator, compensator_rate, drift_consistency_check,
    drift_rate, generator_ratio_form, jump_diffusion, jump_operator_convergence,
    lineage_generator, qv_formula,
)

from oracles import qv_single_ball


def test_jump_kills_constants():
    for b in ("clip", "wrap"):
        out = apply_jump_operator(np.full(101, 3.7), ModelParams(boundary=b))
        assert np.max(np.abs(out)) < 1e-13


def test_jump_sums_to_zero_under_wrap():
    rng = np.random.default_rng(1)
    out = apply_jump_operator(rng.random(101), ModelParams(boundary="wrap"))
    assert abs(out.sum()) < 1e-12


def test_jump_quadratic_interior():
    p = ModelParams()
    x = np.arange(101.0)
    out = apply_jump_operator(x ** 2, p)
    # the double average of a quadratic is exact: D * phi'' with the discrete-ball constant
    assert np.allclose(out[2 * p.R:-2 * p.R], 2 * jump_diffusion(p), rtol=1e-12)


def test_jump_convergence_slope():
    rep = jump_operator_convergence(ModelParams())
    assert 1.8 <= rep.slope <= 2.2
    assert all(a > b for a, b in zip(rep.errors, rep.errors[1:]))


def test_growth_operator_zero_growth():
    p = ModelParams()
    out = apply_growth_operator(np.random.default_rng(0).random(101), np.full(101, 3.0), GrowthSpec.zero(101), p)
    assert np.all(out == 0.0)


def test_growth_operator_constant():
    p = ModelParams(boundary="wrap")
    spec = GrowthSpec(family="logistic_const", kappa=8.0)
    out = apply_growth_operator(np.ones(101), np.full(101, 5.0), spec, p)
    assert np.allclose(out, 0.04 * 9 * 3.0, rtol=1e-13)


def test_growth_operator_valley_interior():
    p, spec = ModelParams(), GrowthSpec()
    out = apply_growth_operator(np.ones(101), np.full(101, 3.0), spec, p)
    expected = 0.04 * 9 * np.mean([spec.evaluate(y, 3.0) for y in range(46, 55)])
    assert out[50] == pytest.approx(expected, rel=1e-13)


def test_generator_examples():
    Q = lineage_generator(np.full(6, 2.0))
    assert Q[2, 1] == Q[2, 3] == 1.0 and Q[2, 2] == -2.0
    Q = lineage_generator(np.array([1.0, 2.0, 4.0]))
    assert Q[1, 0] == 0.5 and Q[1, 2] == 2.0 and Q[1, 1] == -2.5
    with pytest.raises(ValueError):
        lineage_generator(np.array([1.0, 0.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=3, max_size=30), st.sampled_from(["clip", "wrap"]))
def test_generator_rows(n, boundary):
    Q = lineage_generator(np.array(n), boundary)
    assert np.max(np.abs(Q.sum(axis=1))) < 1e-14 * max(1.0, np.max(np.abs(Q)))
    off = Q - np.diag(np.diag(Q))
    assert np.all(off >= 0)


def test_generator_flat_quadratic_and_constant():
    x = np.arange(20.0)
    Q = lineage_generator(np.full(20, 3.0))
    assert np.allclose((Q @ x ** 2)[1:-1], 2.0, atol=1e-12)
    assert np.max(np.abs(Q @ np.full(20, 1.3))) < 1e-14


def test_generator_ratio_form_identity():
    rng = np.random.default_rng(3)
    n, f = rng.random(30) + 0.1, rng.random(30)
    assert np.max(np.abs((lineage_generator(n) @ f)[1:-1] - generator_ratio_form(n, f))) < 1e-12


def test_drift_exponential_profile():
    a = 0.7
    rep = drift_consistency_check(lambda x: np.exp(a * x), lambda x: x, lambda x: np.ones_like(x),
                                  lambda x: np.zeros_like(x), lambda x: a * np.exp(a * x))
    assert rep.max_identity_error < 1e-12
    assert 1.8 <= rep.slope <= 2.2


def test_qv_trivial_cases():
    p, spec = ModelParams(), GrowthSpec.zero(101)
    assert qv_formula(np.full(101, 4.0), np.random.default_rng(0).random(101), p, spec) == pytest.approx(0.0, abs=1e-20)
    assert qv_formula(np.random.default_rng(0).random(101) + 1, np.zeros(101), p, GrowthSpec()) == 0.0


def test_qv_single_ball_bruteforce():
    p = ModelParams(R=2, grid_len=5, n_max=50)
    spec = GrowthSpec(family="logistic_const", kappa=6.0)
    n = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
    phi = np.array([0.3, -1.0, 2.0, 0.5, 1.5])
    expected = qv_single_ball(n, phi, p.u, lambda x, nb: max(6.0 - nb, -1.0))
    assert qv_formula(n, phi, p, spec) == pytest.approx(expected, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_qv_nonnegative(seed):
    rng = np.random.default_rng(seed)
    assert qv_formula(rng.random(101) * 10 + 0.1, rng.normal(size=101), ModelParams(), GrowthSpec()) >= 0


def test_drift_matches_compensator_under_wrap():
    p, spec = ModelParams(boundary="wrap"), GrowthSpec()
    rng = np.random.default_rng(5)
    n, phi = rng.random(101) * 8 + 0.5, rng.random(101)
    assert drift_rate(n, phi, p, spec) == pytest.approx(compensator_rate(n, phi, p, spec), rel=1e-11)
