"""
Tests for the Neyman Lab Monte Carlo harness
Run with: pytest test_simulation.py          (fast checks)
          pytest test_simulation.py -m slow  (desk-scale reproduction runs)
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError

from analytics import NeymanLabError, OutcomeSchedule, bernoulli_variance, finite_stats, neyman_summary
from datasets import ImputeConfig, ObservedDataset, gen_synthetic, impute, normalize
from designs import build_policy, parse_design
from estimators import adaptive_ht
from oracle import enumerate_exact
from simulation import (
    CurvePoint,
    SimConfig,
    collect_draws,
    curve_frame,
    monte_carlo,
    replicate_draws,
    run_experiment,
    variance_curve,
)
from streams import substream

CONSTANT = OutcomeSchedule([2.0] * 50, [1.0] * 50)


def _schedule(T=40, seed=3):
    rng = np.random.default_rng(seed)
    return OutcomeSchedule(rng.uniform(0.2, 1.5, T), rng.uniform(0.1, 1.0, T))


def _variance_se(variance, reps):
    return variance * math.sqrt(2.0 / (reps - 1))


def test_run_experiment_is_deterministic():
    outcomes = _schedule()
    first = run_experiment(outcomes, build_policy("clip-ogd", outcomes), substream(11, 0))
    second = run_experiment(outcomes, build_policy("clip-ogd", outcomes), substream(11, 0))
    assert np.array_equal(first.p, second.p)
    assert np.array_equal(first.z, second.z)
    assert np.array_equal(first.y_obs, second.y_obs)


def test_run_experiment_under_oracle():
    trace = run_experiment(CONSTANT, build_policy("neyman-oracle", CONSTANT), substream(1, 0))
    assert trace.p == pytest.approx([2.0 / 3.0] * CONSTANT.T)


def test_trace_matches_batched_replication():
    outcomes = _schedule()
    trace = run_experiment(outcomes, build_policy("clip-ogd", outcomes), substream(5, 0))
    draws = replicate_draws(outcomes, "clip-ogd", 5, [0, 1, 2])
    assert draws.tau_hat[0] == pytest.approx(adaptive_ht(trace), rel=1e-12)


def test_batching_does_not_change_draws(monkeypatch):
    outcomes = _schedule()
    monkeypatch.setenv("NEYMAN_LAB_CHUNK", "7")
    small = collect_draws(outcomes, "clip-ogd", 9, 30, threads=3)
    monkeypatch.setenv("NEYMAN_LAB_CHUNK", "512")
    whole = collect_draws(outcomes, "clip-ogd", 9, 30, threads=1)
    assert np.array_equal(small.tau_hat, whole.tau_hat)
    assert np.array_equal(small.regret, whole.regret)


def test_replication_order_does_not_matter():
    outcomes = _schedule()
    forward = replicate_draws(outcomes, "etc:t0=4", 2, range(12))
    backward = replicate_draws(outcomes, "etc:t0=4", 2, reversed(range(12)))
    assert np.array_equal(np.sort(forward.tau_hat), np.sort(backward.tau_hat))
    single = replicate_draws(outcomes, "etc:t0=4", 2, [7])
    assert single.tau_hat[0] == forward.tau_hat[7]


def test_monte_carlo_is_reproducible_across_thread_counts():
    outcomes = _schedule()
    one = monte_carlo(outcomes, "clip-ogd", SimConfig(replications=200, seed=4, threads=1))
    many = monte_carlo(outcomes, "clip-ogd", SimConfig(replications=200, seed=4, threads=4))
    assert one.model_dump() == many.model_dump()


def test_neyman_oracle_summary():
    reps = 2000
    summary = monte_carlo(CONSTANT, "neyman-oracle", SimConfig(replications=reps, seed=1))
    assert summary.mean_regret == pytest.approx(0.0, abs=1e-9)
    assert summary.normalized_neyman_variance == pytest.approx(8.0)
    se = _variance_se(8.0, reps)
    assert abs(summary.normalized_empirical_variance - 8.0) <= 3 * se
    assert summary.relative_efficiency_half == pytest.approx(8.0 / 9.0)


def test_bernoulli_at_neyman_probability_has_zero_regret_every_replication():
    outcomes = _schedule()
    p_star = neyman_summary(finite_stats(outcomes)).p_star
    design = parse_design(f"bernoulli:{p_star!r}")
    draws = replicate_draws(outcomes, design, 0, range(50))
    scale = outcomes.T * (finite_stats(outcomes).S1 + finite_stats(outcomes).S0) ** 2
    assert np.all(np.abs(draws.regret) <= 1e-9 * scale)


def test_single_replication_is_flagged_degenerate():
    summary = monte_carlo(_schedule(), "clip-ogd", SimConfig(replications=1, seed=0))
    assert summary.degenerate
    assert summary.empirical_var_tau_hat == 0.0
    assert summary.studentized is None
    assert summary.rep_count == 1


def test_summary_fields():
    summary = monte_carlo(_schedule(), "clip-ogd", SimConfig(replications=300, seed=2))
    assert set(summary.coverage) == {"chebyshev", "wald"}
    for kind in ("chebyshev", "wald"):
        assert set(summary.coverage[kind]) == {"0.05", "0.1"}
        assert all(0.0 <= rate <= 1.0 for rate in summary.coverage[kind].values())
        assert all(width >= 0.0 for width in summary.mean_interval_width[kind].values())
    assert summary.empirical_var_tau_hat >= 0.0
    assert summary.resolved["design"] == "clip-ogd"
    assert sum(summary.studentized.histogram_counts) <= summary.rep_count


def test_monte_carlo_agrees_with_enumeration():
    outcomes = _schedule(T=8, seed=17)
    exact = enumerate_exact(outcomes, build_policy("clip-ogd", outcomes))
    reps = 4000
    draws = collect_draws(outcomes, "clip-ogd", 8, reps)

    tau_se = math.sqrt(exact.var_tau_hat / reps)
    assert abs(np.mean(draws.tau_hat) - exact.mean_tau_hat) <= 4 * tau_se

    centered = draws.tau_hat - exact.mean_tau_hat
    var_se = math.sqrt(max(np.mean(centered ** 4) - exact.var_tau_hat ** 2, 0.0) / reps)
    assert abs(np.var(draws.tau_hat, ddof=1) - exact.var_tau_hat) <= 4 * var_se + 1e-12

    regret_se = float(np.std(draws.regret, ddof=1)) / math.sqrt(reps)
    assert abs(np.mean(draws.regret) - exact.expected_regret) <= 4 * regret_se + 1e-9


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(replications=0)
    with pytest.raises(ValidationError):
        SimConfig(coverage_levels=[0.05, 1.0])
    with pytest.raises(ValidationError):
        SimConfig(seed=-1)


def test_variance_curve_rejects_long_horizon():
    with pytest.raises(NeymanLabError):
        variance_curve(_schedule(T=20), ["clip-ogd"], [30], SimConfig(replications=10))


def test_variance_curve_tracks_exact_lines():
    outcomes = _schedule(T=120, seed=6)
    reps = 1500
    points = variance_curve(outcomes, ["neyman-oracle", "bernoulli:0.5"], [60, 120], SimConfig(replications=reps, seed=3))
    assert [(p.T, p.design) for p in points] == [
        (60, "neyman-oracle"), (60, "bernoulli:0.5"), (120, "neyman-oracle"), (120, "bernoulli:0.5"),
    ]
    for point in points:
        line = point.normalized_neyman_variance if point.design == "neyman-oracle" else point.normalized_bernoulli_variance
        assert abs(point.normalized_empirical_variance - line) <= 4 * _variance_se(line, reps)
        expected = bernoulli_variance(finite_stats(outcomes.truncate(point.T)), 0.5)
        assert point.normalized_bernoulli_variance == pytest.approx(expected)

    frame = curve_frame(points)
    base = [name for name in CurvePoint.model_fields if name != "resolved"]
    assert list(frame.columns) == base + ["resolved_p", "spec_version"]
    assert len(frame) == 4
    assert frame["resolved_p"].iloc[1] == 0.5
    assert set(frame["spec_version"]) == {"1.0"}


def test_curve_records_resolved_step_per_horizon():
    outcomes = _schedule(T=200, seed=8)
    points = variance_curve(outcomes, ["clip-ogd", "etc:t0=cbrt"], [50, 200], SimConfig(replications=20, seed=1))
    clip = [point for point in points if point.design == "clip-ogd"]
    assert [point.resolved["eta"] for point in clip] == pytest.approx([50 ** -0.5, 200 ** -0.5])
    assert clip[1].resolved["alpha"] == pytest.approx(math.sqrt(5.0 * math.log(200)))

    frame = curve_frame(points)
    assert {"resolved_eta", "resolved_alpha", "resolved_t0", "resolved_p_min"} <= set(frame.columns)
    assert list(frame["resolved_t0"].dropna()) == [4, 6]


# ---------------------------------------------------------------------------
# Desk-scale reproduction runs
# ---------------------------------------------------------------------------

IID_SCALED = {"lam": "2", "a": "0.25", "b": "1"}


def _unit_iid_scaled(T):
    """iid-scaled outcomes rescaled onto [0, 1], the range the default step size is tuned for"""
    return normalize(gen_synthetic("iid-scaled", T, seed=12, params=IID_SCALED))


@pytest.mark.slow
def test_clip_ogd_converges_to_neyman_variance():
    outcomes = _unit_iid_scaled(10_000)
    summary = monte_carlo(outcomes, "clip-ogd", SimConfig(replications=2000, seed=1))
    neyman = summary.normalized_neyman_variance
    assert abs(summary.normalized_empirical_variance - neyman) <= 0.10 * neyman
    assert summary.normalized_empirical_variance < summary.normalized_bernoulli_variance


@pytest.mark.slow
def test_clip_ogd_regret_is_sublinear():
    outcomes = _unit_iid_scaled(4096)
    per_round = []
    normalized = []
    for T in (256, 1024, 4096):
        draws = collect_draws(outcomes.truncate(T), "clip-ogd", 1, 2000)
        mean_regret = float(np.mean(draws.regret))
        per_round.append(mean_regret / T)
        normalized.append(mean_regret / (math.sqrt(T) * math.exp(math.sqrt(5.0 * math.log(T)))))
    assert per_round[0] > per_round[1] > per_round[2]
    assert normalized[-1] <= 1.10 * normalized[0]


@pytest.mark.slow
def test_etc_fails_on_adversarial_schedule():
    # the prefix points ETC at p near 0.09 while the full schedule wants p* near 0.63
    outcomes = gen_synthetic("etc-adversarial", 4096, params={"low": 0.1, "high": 1.0})
    reps = 2000
    config = SimConfig(replications=reps, seed=5)
    etc = monte_carlo(outcomes, "etc:t0=cbrt", config)
    clip = monte_carlo(outcomes, "clip-ogd", config)
    bernoulli = etc.normalized_bernoulli_variance
    etc_se = _variance_se(etc.normalized_empirical_variance, reps)
    clip_se = _variance_se(clip.normalized_empirical_variance, reps)
    assert etc.normalized_empirical_variance >= bernoulli - 3 * etc_se
    assert clip.normalized_empirical_variance <= bernoulli + 3 * clip_se
    assert clip.normalized_empirical_variance < etc.normalized_empirical_variance


@pytest.mark.slow
def test_variance_bound_estimate_is_consistent():
    outcomes = gen_synthetic("iid-scaled", 4000, seed=21, params=IID_SCALED)
    errors = []
    for T in (1000, 4000):
        prefix = outcomes.truncate(T)
        truth = neyman_summary(finite_stats(prefix)).normalized_variance_bound
        draws = collect_draws(prefix, "clip-ogd", 2, 500)
        errors.append(float(np.median(np.abs(draws.normalized_vb_hat - truth))))
    assert 1.4 <= errors[0] / errors[1] <= 2.8


@pytest.mark.slow
def test_chebyshev_intervals_cover_on_imputed_data():
    rng = np.random.default_rng(99)
    observed = ObservedDataset(rng.uniform(0.0, 10.0, 2000), rng.random(2000) < 0.5)
    outcomes = normalize(impute(observed, ImputeConfig(tau=1.5, sigma=0.0, seed=3)))
    levels = [0.05, 0.1]
    summary = monte_carlo(outcomes, "clip-ogd", SimConfig(replications=2000, seed=7, coverage_levels=levels))
    for level in levels:
        assert summary.coverage["chebyshev"][f"{level:g}"] >= 1.0 - level - 0.01
