"""
Tests for Neyman Lab analytics
Run with: pytest test_analytics.py
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from analytics import (
    DegenerateArmError,
    EmptyScheduleError,
    FiniteStats,
    LengthMismatchError,
    MomentBounds,
    NeymanLabError,
    OutcomeSchedule,
    ProbabilityRangeError,
    bernoulli_variance,
    cost,
    finite_stats,
    neyman_benchmark,
    neyman_ratio,
    neyman_regret,
    neyman_summary,
    outcome_regret,
    relative_efficiency,
)

CONSTANT = OutcomeSchedule([2.0] * 4, [1.0] * 4)

outcome_values = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, allow_infinity=False)


@st.composite
def schedules(draw, min_size=1, max_size=30):
    T = draw(st.integers(min_value=min_size, max_value=max_size))
    y1 = draw(st.lists(outcome_values, min_size=T, max_size=T))
    y0 = draw(st.lists(outcome_values, min_size=T, max_size=T))
    return OutcomeSchedule(y1, y0)


def test_schedule_rejects_bad_input():
    with pytest.raises(EmptyScheduleError, match="empty schedule"):
        OutcomeSchedule([], [])
    with pytest.raises(LengthMismatchError):
        OutcomeSchedule([1.0, 2.0], [1.0])
    with pytest.raises(NeymanLabError):
        OutcomeSchedule([1.0, math.inf], [1.0, 2.0])


def test_schedule_is_read_only():
    with pytest.raises(ValueError):
        CONSTANT.y1[0] = 5.0


def test_truncate():
    outcomes = OutcomeSchedule([1.0, 2.0, 3.0], [0.0, 0.0, 1.0])
    assert outcomes.truncate(2).T == 2
    assert outcomes.truncate(2).tau == pytest.approx(1.5)
    with pytest.raises(NeymanLabError):
        outcomes.truncate(4)


def test_constant_schedule_summary():
    stats = finite_stats(CONSTANT)
    assert stats.S1 == pytest.approx(2.0)
    assert stats.S0 == pytest.approx(1.0)
    assert stats.rho == pytest.approx(1.0)
    assert stats.tau == pytest.approx(1.0)

    summary = neyman_summary(stats)
    assert summary.p_star == pytest.approx(2.0 / 3.0)
    assert summary.normalized_neyman_variance == pytest.approx(8.0)
    assert summary.normalized_variance_bound == pytest.approx(8.0)


def test_zero_arm_is_degenerate():
    stats = finite_stats(OutcomeSchedule([0.0, 0.0], [1.0, 2.0]))
    assert stats.rho is None
    assert not stats.rho_defined
    with pytest.raises(DegenerateArmError, match="degenerate arm"):
        neyman_summary(stats)


def test_relative_efficiency_worked_example():
    # S1 = 4 S0, uncorrelated arms
    stats = FiniteStats(T=1, S1=4.0, S0=1.0, rho=0.0, tau=0.0)
    assert 0.470 <= relative_efficiency(stats, 0.5) <= 0.471
    assert 0.165 <= relative_efficiency(stats, 0.25) <= 0.166


def test_relative_efficiency_is_one_at_neyman_probability():
    stats = finite_stats(CONSTANT)
    assert relative_efficiency(stats, neyman_summary(stats).p_star) == pytest.approx(1.0)


def test_bernoulli_variance_rejects_boundary():
    stats = finite_stats(CONSTANT)
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ProbabilityRangeError):
            bernoulli_variance(stats, p)


def test_bernoulli_variance_is_vectorised():
    stats = finite_stats(CONSTANT)
    values = bernoulli_variance(stats, np.array([0.5, 2.0 / 3.0]))
    # 4/(1/2) + 1/(1/2) - (2 - 1)^2 = 9
    assert values == pytest.approx([9.0, 8.0])


def test_cost():
    assert cost(2.0, 1.0, 0.5) == pytest.approx(10.0)
    with pytest.raises(ProbabilityRangeError):
        cost(2.0, 1.0, 1.0)


def test_neyman_regret_examples():
    # f_t(p*) = (S1 + S0)^2 every round
    assert neyman_regret(CONSTANT, [2.0 / 3.0] * 4) == pytest.approx(0.0, abs=1e-12)
    # f_t(1/2) = 10 against a benchmark of 9 per round
    assert neyman_regret(CONSTANT, [0.5] * 4) == pytest.approx(4.0)
    assert neyman_benchmark(finite_stats(CONSTANT)) == pytest.approx(36.0)


def test_neyman_regret_batches_rows():
    regrets = neyman_regret(CONSTANT, [[0.5] * 4, [2.0 / 3.0] * 4])
    assert regrets == pytest.approx([4.0, 0.0], abs=1e-12)


def test_neyman_regret_length_mismatch():
    with pytest.raises(LengthMismatchError):
        neyman_regret(CONSTANT, [0.5] * 3)


def test_neyman_ratio():
    assert neyman_ratio(10.0, 8.0) == pytest.approx(0.25)
    with pytest.raises(NeymanLabError, match="zero denominator"):
        neyman_ratio(1.0, 0.0)


def test_outcome_regret():
    outcomes = OutcomeSchedule([1.0, 3.0], [2.0, 0.0])
    assert outcome_regret(outcomes, [1, 1]) == pytest.approx(0.0)
    assert outcome_regret(outcomes, [0, 0]) == pytest.approx(2.0)


def test_moment_bounds():
    bounds = MomentBounds(1.0, 1.0)
    assert bounds.a == pytest.approx(2.0)
    with pytest.raises(NeymanLabError):
        MomentBounds(0.0, 1.0)
    with pytest.raises(NeymanLabError):
        MomentBounds(0.5, 0.25)


@settings(max_examples=200, deadline=None)
@given(schedules(), st.floats(min_value=0.01, max_value=0.99))
def test_neyman_variance_is_minimal(outcomes, p):
    stats = finite_stats(outcomes)
    if not stats.rho_defined:
        return
    summary = neyman_summary(stats)
    scale = max(1.0, summary.normalized_variance_bound)
    assert bernoulli_variance(stats, p) >= summary.normalized_neyman_variance - 1e-9 * scale
    assert summary.normalized_neyman_variance <= summary.normalized_variance_bound + 1e-12 * scale
    assert -1.0 <= stats.rho <= 1.0


@settings(max_examples=200, deadline=None)
@given(schedules(), st.floats(min_value=0.01, max_value=0.99))
def test_regret_is_nonnegative_for_constant_probabilities(outcomes, p):
    stats = finite_stats(outcomes)
    regret = neyman_regret(outcomes, [p] * outcomes.T)
    assert regret >= -1e-9 * max(1.0, neyman_benchmark(stats))


def test_neyman_regret_with_varying_probabilities():
    outcomes = OutcomeSchedule([1.0, 1.0], [1.0, 1.0])
    # f_2(1/4) - f_2(1/2) = (4 + 4/3) - 4
    assert neyman_regret(outcomes, [0.5, 0.25]) == pytest.approx(4.0 / 3.0)
    unit_pairs = OutcomeSchedule([1.0, 0.0], [0.0, 1.0])
    assert neyman_regret(unit_pairs, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)


def test_benchmark_matches_grid_search():
    rng = np.random.default_rng(7)
    grid = np.arange(1, 10**6) / 10**6
    for _ in range(10):
        outcomes = OutcomeSchedule(rng.uniform(-2.0, 2.0, 30), rng.uniform(-2.0, 2.0, 30))
        searched = np.min(np.sum(outcomes.y1 ** 2) / grid + np.sum(outcomes.y0 ** 2) / (1.0 - grid))
        assert neyman_benchmark(finite_stats(outcomes)) == pytest.approx(searched, rel=1e-6)


def test_neyman_regret_ignores_unit_order():
    rng = np.random.default_rng(11)
    outcomes = OutcomeSchedule(rng.uniform(0.0, 3.0, 25), rng.uniform(0.0, 3.0, 25))
    probs = rng.uniform(0.05, 0.95, 25)
    order = rng.permutation(25)
    shuffled = OutcomeSchedule(outcomes.y1[order], outcomes.y0[order])
    assert neyman_regret(shuffled, probs[order]) == pytest.approx(neyman_regret(outcomes, probs), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(schedules())
def test_variance_bound_gap_is_the_correlation_slack(outcomes):
    stats = finite_stats(outcomes)
    if not stats.rho_defined:
        return
    summary = neyman_summary(stats)
    if not 0.0 < summary.p_star < 1.0:
        return
    gap = summary.normalized_variance_bound - bernoulli_variance(stats, summary.p_star)
    scale = max(1.0, (stats.S1 + stats.S0) ** 2)
    assert gap == pytest.approx(2.0 * (1.0 - stats.rho) * stats.S1 * stats.S0, abs=1e-9 * scale)
    assert gap >= -1e-9 * scale
