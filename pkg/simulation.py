"""
Neyman Lab - Monte Carlo Harness
Seeded replications of a design on an outcome schedule: estimator distribution,
empirical variance curves, regret growth and interval coverage.

Replication r draws its assignments from Philox stream (seed, r), so results do not
depend on batching, thread count, or the order replications are run in.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from analytics import (
    DegenerateArmError,
    OutcomeSchedule,
    bernoulli_variance,
    cost,
    finite_stats,
    neyman_benchmark,
    neyman_summary,
    relative_efficiency,
)
from designs import DesignPolicy, DesignSpec, parse_design, rollout
from estimators import (
    INTERVAL_BUILDERS,
    Trace,
    control_moment_terms,
    half_width,
    ht_terms,
    treated_moment_terms,
    variance_bound_from_moments,
)
from settings import DEFAULT_LEVELS, DEFAULT_REPLICATIONS, SPEC_VERSION, load_settings
from streams import MASK64, ReplicationStreams

logger = logging.getLogger(__name__)

# Rounds of uniforms fetched per stream at a time
UNIFORM_BLOCK = 1024

HISTOGRAM_BINS = 16
HISTOGRAM_RANGE = (-4.0, 4.0)


class SimConfig(BaseModel):
    replications: int = Field(default=DEFAULT_REPLICATIONS, ge=1)
    seed: int = Field(default=0, ge=0, le=MASK64)
    policy_spec: str = "clip-ogd"
    coverage_levels: list[float] = Field(default_factory=lambda: list(DEFAULT_LEVELS))
    t_grid: list[int] | None = None
    threads: int | None = Field(default=None, ge=1)

    @field_validator("coverage_levels")
    @classmethod
    def _levels_in_unit_interval(cls, levels: list[float]) -> list[float]:
        if any(not 0.0 < level < 1.0 for level in levels):
            raise ValueError("coverage levels must lie in (0, 1)")
        return levels

    @field_validator("t_grid")
    @classmethod
    def _positive_horizons(cls, grid: list[int] | None) -> list[int] | None:
        if grid is not None and any(h < 1 for h in grid):
            raise ValueError("horizons must be positive")
        return grid


class StudentizedSummary(BaseModel):
    """Distribution of (tau - tau_hat) / sd(tau_hat) across replications"""
    model_config = ConfigDict(frozen=True)

    mean: float
    std: float
    within_1_96: float
    histogram_edges: list[float]
    histogram_counts: list[int]


class SimSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    design: str
    resolved: dict
    T: int
    rep_count: int
    tau: float
    mean_tau_hat: float
    empirical_var_tau_hat: float
    normalized_empirical_variance: float
    degenerate: bool
    normalized_neyman_variance: float | None
    normalized_bernoulli_variance: float | None
    normalized_variance_bound: float | None
    relative_efficiency_half: float | None
    mean_regret: float
    mean_outcome_regret: float
    mean_normalized_vb_hat: float
    coverage: dict[str, dict[str, float]]
    mean_interval_width: dict[str, dict[str, float]]
    studentized: StudentizedSummary | None


class CurvePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    T: int
    design: str
    normalized_empirical_variance: float
    normalized_neyman_variance: float | None
    normalized_bernoulli_variance: float | None
    normalized_variance_bound: float | None
    mean_regret: float
    replications: int
    resolved: dict


@dataclass(frozen=True)
class ReplicationDraws:
    """Per-replication outputs, aligned with `indices`"""
    indices: np.ndarray
    tau_hat: np.ndarray
    a1_hat: np.ndarray
    a0_hat: np.ndarray
    normalized_vb_hat: np.ndarray
    regret: np.ndarray
    outcome_regret: np.ndarray

    @classmethod
    def concat(cls, parts: list["ReplicationDraws"]) -> "ReplicationDraws":
        return cls(*(np.concatenate([getattr(part, name) for part in parts]) for name in cls.__dataclass_fields__))


class _UniformFeed:
    """Column t of the (lanes x T) uniform matrix, fetched a block of rounds at a time"""

    def __init__(self, streams: ReplicationStreams, horizon: int):
        self.streams = streams
        self.horizon = horizon
        self._block = None
        self._start = 1

    def column(self, t: int) -> np.ndarray:
        if self._block is None or t >= self._start + self._block.shape[1]:
            self._start = t
            self._block = self.streams.block(min(UNIFORM_BLOCK, self.horizon - t + 1))
        return self._block[:, t - self._start]


def run_experiment(outcomes: OutcomeSchedule, policy: DesignPolicy, rng_stream: np.random.Generator) -> Trace:
    """One realized experiment: Z_t ~ Bernoulli(P_t) from rng_stream, recorded as a Trace"""
    p_col, z_col, y_col = [], [], []

    def assign(t, p):
        return rng_stream.random(1) < p

    for _, p, z, y in rollout(outcomes, policy, 1, assign):
        p_col.append(p[0])
        z_col.append(z[0])
        y_col.append(y[0])

    return Trace(p=np.array(p_col), z=np.array(z_col), y_obs=np.array(y_col))


def replicate_draws(outcomes: OutcomeSchedule, design: str | DesignSpec, seed: int, indices) -> ReplicationDraws:
    """Run the replications in `indices` as one vectorised batch"""
    spec = parse_design(design) if isinstance(design, str) else design
    policy = spec.build(outcomes)
    streams = ReplicationStreams(seed, indices)
    feed = _UniformFeed(streams, outcomes.T)
    lanes = streams.lanes

    ht_sum = np.zeros(lanes)
    a1_sum = np.zeros(lanes)
    a0_sum = np.zeros(lanes)
    cost_sum = np.zeros(lanes)
    observed_sum = np.zeros(lanes)

    def assign(t, p):
        return feed.column(t) < p

    for t, p, z, y in rollout(outcomes, policy, lanes, assign):
        ht_sum += ht_terms(p, z, y)
        a1_sum += treated_moment_terms(p, z, y)
        a0_sum += control_moment_terms(p, z, y)
        cost_sum += cost(outcomes.y1[t - 1], outcomes.y0[t - 1], p)
        observed_sum += y

    T = outcomes.T
    stats = finite_stats(outcomes)
    best = max(float(np.sum(outcomes.y1)), float(np.sum(outcomes.y0)))
    a1_hat = a1_sum / T
    a0_hat = a0_sum / T

    return ReplicationDraws(
        indices=np.asarray(streams.indices, dtype=np.uint64),
        tau_hat=ht_sum / T,
        a1_hat=a1_hat,
        a0_hat=a0_hat,
        normalized_vb_hat=variance_bound_from_moments(a1_hat, a0_hat),
        regret=cost_sum - neyman_benchmark(stats),
        outcome_regret=best - observed_sum,
    )


def collect_draws(
    outcomes: OutcomeSchedule,
    design: str | DesignSpec,
    seed: int,
    replications: int,
    threads: int | None = None,
) -> ReplicationDraws:
    """All replications 0..R-1, batched and spread over a thread pool"""
    settings = load_settings(threads)
    spec = parse_design(design) if isinstance(design, str) else design
    chunks = [
        range(start, min(start + settings.chunk, replications))
        for start in range(0, replications, settings.chunk)
    ]

    def run(chunk):
        return replicate_draws(outcomes, spec, seed, chunk)

    if settings.threads == 1 or len(chunks) == 1:
        parts = [run(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            parts = list(pool.map(run, chunks))
    return ReplicationDraws.concat(parts)


def _neyman_lines(outcomes: OutcomeSchedule) -> dict:
    stats = finite_stats(outcomes)
    try:
        summary = neyman_summary(stats)
    except DegenerateArmError:
        return {
            "normalized_neyman_variance": None,
            "normalized_bernoulli_variance": bernoulli_variance(stats, 0.5),
            "normalized_variance_bound": None,
            "relative_efficiency_half": None,
        }
    return {
        "normalized_neyman_variance": summary.normalized_neyman_variance,
        "normalized_bernoulli_variance": bernoulli_variance(stats, 0.5),
        "normalized_variance_bound": summary.normalized_variance_bound,
        "relative_efficiency_half": relative_efficiency(stats, 0.5),
    }


def _level_key(level: float) -> str:
    return f"{level:g}"


def _studentized(tau: float, tau_hat: np.ndarray, sd: float) -> StudentizedSummary | None:
    if sd <= 0.0 or tau_hat.size < 2:
        return None
    scores = (tau - tau_hat) / sd
    counts, edges = np.histogram(scores, bins=HISTOGRAM_BINS, range=HISTOGRAM_RANGE)
    return StudentizedSummary(
        mean=float(np.mean(scores)),
        std=float(np.std(scores, ddof=1)),
        within_1_96=float(np.mean(np.abs(scores) <= 1.96)),
        histogram_edges=edges.tolist(),
        histogram_counts=counts.tolist(),
    )


def summarize(outcomes: OutcomeSchedule, design: str, resolved: dict, draws: ReplicationDraws, levels) -> SimSummary:
    """Reduce per-replication draws, always in replication-index order"""
    T = outcomes.T
    tau = outcomes.tau
    reps = draws.tau_hat.size
    degenerate = reps < 2
    variance = 0.0 if degenerate else float(np.var(draws.tau_hat, ddof=1))

    coverage = {}
    widths = {}
    for kind, (_, multiplier) in INTERVAL_BUILDERS.items():
        coverage[kind] = {}
        widths[kind] = {}
        for level in levels:
            w = half_width(draws.normalized_vb_hat, T, multiplier(level))
            covered = np.abs(draws.tau_hat - tau) <= w
            coverage[kind][_level_key(level)] = float(np.mean(covered))
            widths[kind][_level_key(level)] = float(np.mean(2.0 * w))

    return SimSummary(
        design=design,
        resolved=resolved,
        T=T,
        rep_count=reps,
        tau=tau,
        mean_tau_hat=float(np.mean(draws.tau_hat)),
        empirical_var_tau_hat=variance,
        normalized_empirical_variance=T * variance,
        degenerate=degenerate,
        mean_regret=float(np.mean(draws.regret)),
        mean_outcome_regret=float(np.mean(draws.outcome_regret)),
        mean_normalized_vb_hat=float(np.mean(draws.normalized_vb_hat)),
        coverage=coverage,
        mean_interval_width=widths,
        studentized=_studentized(tau, draws.tau_hat, math.sqrt(variance)),
        **_neyman_lines(outcomes),
    )


def monte_carlo(outcomes: OutcomeSchedule, policy_spec: str, config: SimConfig) -> SimSummary:
    """R seeded replications of one design, aggregated into a SimSummary"""
    spec = parse_design(policy_spec)
    resolved = spec.build(outcomes).describe()
    logger.info("simulating %s T=%d reps=%d seed=%d", spec.text, outcomes.T, config.replications, config.seed)
    draws = collect_draws(outcomes, spec, config.seed, config.replications, config.threads)
    return summarize(outcomes, spec.text, resolved, draws, config.coverage_levels)


def variance_curve(
    outcomes: OutcomeSchedule,
    policy_specs: list[str],
    t_grid: list[int] | None,
    config: SimConfig,
) -> list[CurvePoint]:
    """
    Normalized empirical variance per design at each horizon T', the population being
    the first T' units, next to the exact Neyman and Bernoulli(1/2) lines.

    t_grid falls back to config.t_grid, then to the full schedule length.
    """
    t_grid = t_grid or config.t_grid or [outcomes.T]
    specs = [parse_design(text) for text in policy_specs]
    points = []
    total = len(t_grid) * len(specs)
    step = 0
    for horizon in t_grid:
        prefix = outcomes.truncate(horizon)
        lines = _neyman_lines(prefix)
        for spec in specs:
            step += 1
            logger.info("[%d/%d] %s T=%d", step, total, spec.text, horizon)
            draws = collect_draws(prefix, spec, config.seed, config.replications, config.threads)
            variance = float(np.var(draws.tau_hat, ddof=1)) if draws.tau_hat.size > 1 else 0.0
            points.append(CurvePoint(
                T=horizon,
                design=spec.text,
                normalized_empirical_variance=horizon * variance,
                normalized_neyman_variance=lines["normalized_neyman_variance"],
                normalized_bernoulli_variance=lines["normalized_bernoulli_variance"],
                normalized_variance_bound=lines["normalized_variance_bound"],
                mean_regret=float(np.mean(draws.regret)),
                replications=draws.tau_hat.size,
                resolved=spec.build(prefix).describe(),
            ))
    return points


def curve_frame(points: list[CurvePoint]) -> pd.DataFrame:
    """
    One row per (horizon, design); the CSV plotting input.

    Resolved design parameters become resolved_* columns, blank where a design has no
    such parameter.
    """
    columns = [name for name in CurvePoint.model_fields if name != "resolved"]
    frame = pd.DataFrame([point.model_dump(exclude={"resolved"}) for point in points], columns=columns)
    resolved = pd.DataFrame(
        [{key: value for key, value in point.resolved.items() if key != "design"} for point in points],
        index=frame.index,
    )
    frame = pd.concat([frame, resolved.add_prefix("resolved_")], axis=1)
    frame["spec_version"] = SPEC_VERSION
    return frame
