"""
Neyman Lab - Neyman Analytics
Potential-outcome schedules and closed-form Neyman quantities: moments, Neyman
probability and variance, Bernoulli variance, costs, Neyman regret and ratio
"""
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class NeymanLabError(ValueError):
    """Base class for every domain error raised by the toolkit"""


class EmptyScheduleError(NeymanLabError):
    pass


class DegenerateArmError(NeymanLabError):
    pass


class ProbabilityRangeError(NeymanLabError):
    pass


class LengthMismatchError(NeymanLabError):
    pass


def check_open_interval(p, message: str = "probability out of open interval") -> None:
    """Raise ProbabilityRangeError unless every entry of p lies strictly inside (0, 1)"""
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ProbabilityRangeError(message)


def _as_float(value):
    """Collapse 0-d results back to a plain float"""
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True, eq=False)
class OutcomeSchedule:
    """The fixed potential-outcome table {y_t(1), y_t(0)} for t = 1..T"""
    y1: FloatArray
    y0: FloatArray

    def __post_init__(self):
        y1 = np.array(self.y1, dtype=np.float64).reshape(-1)
        y0 = np.array(self.y0, dtype=np.float64).reshape(-1)
        if y1.size == 0 and y0.size == 0:
            raise EmptyScheduleError("empty schedule")
        if y1.size != y0.size:
            raise LengthMismatchError(f"y1 has {y1.size} entries but y0 has {y0.size}")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
            raise NeymanLabError("potential outcomes must be finite")
        y1.flags.writeable = False
        y0.flags.writeable = False
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)

    @property
    def T(self) -> int:
        return int(self.y1.size)

    @property
    def effects(self) -> FloatArray:
        """Individual treatment effects tau_t"""
        return self.y1 - self.y0

    @property
    def tau(self) -> float:
        return float(np.mean(self.effects))

    def truncate(self, horizon: int) -> "OutcomeSchedule":
        """The first `horizon` units"""
        if not 1 <= horizon <= self.T:
            raise NeymanLabError(f"horizon {horizon} exceeds schedule length {self.T}")
        return OutcomeSchedule(self.y1[:horizon], self.y0[:horizon])

    def same_as(self, other: "OutcomeSchedule") -> bool:
        return np.array_equal(self.y1, other.y1) and np.array_equal(self.y0, other.y0)


@dataclass(frozen=True)
class FiniteStats:
    """
    Finite-population second moments.

    rho is the cosine similarity of the outcome vectors; it is None when either arm has
    zero norm, so an undefined correlation never leaks out as NaN.
    """
    T: int
    S1: float
    S0: float
    rho: float | None
    tau: float

    @property
    def rho_defined(self) -> bool:
        return self.rho is not None

    @property
    def cross_moment(self) -> float:
        """(1/T) sum y_t(1) y_t(0), which is zero whenever rho is undefined"""
        return 0.0 if self.rho is None else self.rho * self.S1 * self.S0


@dataclass(frozen=True)
class NeymanSummary:
    p_star: float
    normalized_neyman_variance: float
    normalized_variance_bound: float


@dataclass(frozen=True)
class MomentBounds:
    """Bounds c <= S(k) <= C assumed on the outcome moments"""
    c: float
    C: float

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise NeymanLabError("moment bound c must lie in (0, 1]")
        if self.C < self.c:
            raise NeymanLabError("moment bound C must be at least c")

    @property
    def a(self) -> float:
        return 1.0 + self.C / self.c


def finite_stats(outcomes: OutcomeSchedule) -> FiniteStats:
    """Compute S(1), S(0), rho and tau for a schedule"""
    if outcomes.T == 0:
        raise EmptyScheduleError("empty schedule")

    s1 = math.sqrt(float(np.mean(outcomes.y1 ** 2)))
    s0 = math.sqrt(float(np.mean(outcomes.y0 ** 2)))

    rho = None
    if s1 > 0.0 and s0 > 0.0:
        cross = float(np.mean(outcomes.y1 * outcomes.y0))
        rho = min(1.0, max(-1.0, cross / (s1 * s0)))

    return FiniteStats(T=outcomes.T, S1=s1, S0=s0, rho=rho, tau=outcomes.tau)


def neyman_summary(stats: FiniteStats) -> NeymanSummary:
    """Neyman probability p*, normalized Neyman variance and the 4*S1*S0 bound"""
    if stats.S1 <= 0.0 or stats.S0 <= 0.0:
        raise DegenerateArmError("degenerate arm")

    return NeymanSummary(
        p_star=1.0 / (1.0 + stats.S0 / stats.S1),
        normalized_neyman_variance=2.0 * (1.0 + stats.rho) * stats.S1 * stats.S0,
        normalized_variance_bound=4.0 * stats.S1 * stats.S0,
    )


def bernoulli_variance(stats: FiniteStats, p):
    """Normalized variance T*V_p of the HT estimator under the Bernoulli(p) design"""
    check_open_interval(p)
    p = np.asarray(p, dtype=np.float64)
    value = (
        stats.S1 ** 2 * (1.0 / p - 1.0)
        + stats.S0 ** 2 * (1.0 / (1.0 - p) - 1.0)
        + 2.0 * stats.cross_moment
    )
    return _as_float(value)


def relative_efficiency(stats: FiniteStats, p):
    """V_N / V_p; equals 1 at the Neyman probability"""
    neyman = neyman_summary(stats).normalized_neyman_variance
    variance = np.asarray(bernoulli_variance(stats, p))
    # rho = -1 makes V_N vanish; the ratio is then 1 only where V_p vanishes too
    ratio = np.divide(
        neyman, variance, out=np.ones_like(variance, dtype=np.float64), where=variance > 0.0
    )
    return _as_float(ratio)


def cost(y1_t, y0_t, p):
    """Per-round cost f_t(p) = y_t(1)^2 / p + y_t(0)^2 / (1 - p)"""
    check_open_interval(p)
    p = np.asarray(p, dtype=np.float64)
    return _as_float(np.square(y1_t) / p + np.square(y0_t) / (1.0 - p))


def neyman_benchmark(stats: FiniteStats) -> float:
    """min over fixed p of sum_t f_t(p), in closed form T * (S1 + S0)^2"""
    return stats.T * (stats.S1 + stats.S0) ** 2


def neyman_regret(outcomes: OutcomeSchedule, probs):
    """
    Signed Neyman regret sum_t f_t(P_t) - min_p sum_t f_t(p).

    probs may be one sequence of length T or a 2-D batch with one sequence per row;
    the result is a float or one regret per row.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[-1:] != (outcomes.T,):
        raise LengthMismatchError(
            f"expected {outcomes.T} probabilities, got {probs.shape[-1] if probs.ndim else 0}"
        )
    total = np.sum(cost(outcomes.y1, outcomes.y0, probs), axis=-1)
    return _as_float(total - neyman_benchmark(finite_stats(outcomes)))


def neyman_ratio(adaptive_normalized_variance: float, neyman_normalized_variance: float) -> float:
    """kappa such that V = (1 + kappa) * V_N"""
    if neyman_normalized_variance <= 0.0:
        raise NeymanLabError("zero denominator: Neyman variance must be positive")
    return (adaptive_normalized_variance - neyman_normalized_variance) / neyman_normalized_variance


def outcome_regret(outcomes: OutcomeSchedule, z):
    """Bandit outcome regret max_k sum_t y_t(k) - sum_t Y_t for realized assignments"""
    z = np.asarray(z, dtype=bool)
    if z.shape[-1:] != (outcomes.T,):
        raise LengthMismatchError(f"expected {outcomes.T} assignments")
    best = max(float(np.sum(outcomes.y1)), float(np.sum(outcomes.y0)))
    observed = np.where(z, outcomes.y1, outcomes.y0).sum(axis=-1)
    return _as_float(best - observed)
