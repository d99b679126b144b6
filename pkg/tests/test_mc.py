import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdoc.core import ControlSignal
from cdoc.mc import TradeoffCurve, TradeoffPoint, evaluate_dispersion, sample_parameters, sweep_weights
from cdoc.problems import get_problem


def test_draws_stay_in_range():
    d = sample_parameters([10.0], 0.1, 100, seed=0)
    assert d.shape == (100, 1)
    assert np.all((d >= 9.0) & (d <= 11.0))


def test_zero_fraction_returns_nominal():
    assert np.all(sample_parameters([10.0, -2.0], 0.0, 5, seed=3) == [10.0, -2.0])


def test_zero_nominal_uses_absolute_range():
    d = sample_parameters([0.0], 0.2, 200, seed=1)
    assert np.all(np.abs(d) <= 0.2) and d.min() < 0 < d.max()


def test_negative_nominal_range_is_ordered():
    d = sample_parameters([-1.0], 0.2, 200, seed=1)
    assert np.all((d >= -1.2) & (d <= -0.8))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 50), frac=st.floats(0.0, 1.0))
def test_draws_are_a_pure_function_of_the_seed(seed, n, frac):
    a = sample_parameters([3.0, 0.0], frac, n, seed)
    b = sample_parameters([3.0, 0.0], frac, n, seed)
    assert np.array_equal(a, b)
    # prefixes agree: more draws never reshuffle earlier ones
    assert np.array_equal(sample_parameters([3.0, 0.0], frac, n + 3, seed)[:n], a)


@pytest.mark.parametrize("bad", [dict(fraction=1.5, n=3), dict(fraction=0.1, n=0)])
def test_sampling_argument_checks(bad):
    with pytest.raises(ValueError):
        sample_parameters([1.0], seed=0, **bad)


def test_repeated_nominal_draws_have_no_spread():
    prob = get_problem("lqr-b")
    u = ControlSignal.from_function(prob.grid(101), lambda t: -0.3 * np.exp(-t))
    stats = evaluate_dispersion(prob, u, np.tile(prob.p0, (100, 1)))
    assert stats.std == 0.0
    assert stats.mean == pytest.approx(stats.nominal_cost, abs=1e-15)
    assert stats.spread == 0.0


def test_divergent_draws_are_counted():
    prob = get_problem("lqr-a-unstable")
    u = ControlSignal.constant(prob.grid(101), 0.0)
    draws = np.array([[0.1], [60.0], [-0.5]])
    with np.errstate(all="ignore"):
        stats = evaluate_dispersion(prob, u, draws)
    assert stats.excluded == 1 and stats.samples == 3
    assert bool(stats.diverged[1]) and np.isnan(stats.costs[1])
    assert np.isfinite(stats.std)
    assert stats.summary()["excluded"] == 1


def test_pareto_violation_detection():
    pts = [TradeoffPoint(0.0, 1.0, 0.0, 2.0, True), TradeoffPoint(1.0, 0.5, 0.1, 1.0, True),
           TradeoffPoint(2.0, 0.6, 0.1, 1.5, True)]
    bad = TradeoffCurve(pts).pareto_violations()
    assert (0.0, 1.0, "J") in bad and (1.0, 2.0, "sensitivity") in bad


@pytest.mark.parametrize("weights", [[], [1.0, 0.0], [-1.0, 2.0], [1.0, 1.0]])
def test_sweep_rejects_bad_weights(weights):
    with pytest.raises(ValueError):
        sweep_weights(get_problem("lqr-b"), weights)


def test_sweep_small_lqr():
    curve = sweep_weights(get_problem("lqr-b"), [0.0, 100.0])
    assert curve.weights == [0.0, 100.0] and not curve.failed
    assert curve.pareto_ordered
    assert curve.points[0].Jc == 0.0 and curve.points[1].Jc > 0.0
