"""
Neyman Lab - Exact Enumeration
Brute-force evaluation over all 2^T assignment paths for tiny horizons.

Path k assigns Z_t = bit (t-1) of k, so running the policy on 2^T lanes at once visits
every path of the assignment tree; the policy's determinism guarantees each lane sees
exactly the probabilities that path would see.
"""
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict

from analytics import (
    NeymanLabError,
    OutcomeSchedule,
    cost,
    finite_stats,
    neyman_benchmark,
    neyman_summary,
)
from designs import DesignPolicy, rollout
from estimators import control_moment_terms, ht_terms, treated_moment_terms
from settings import ENUMERATION_CAP

logger = logging.getLogger(__name__)

# The cross-moment matrix keeps two T x 2^T arrays
CROSS_MOMENT_CAP = 14


class EnumerationCapError(NeymanLabError):
    pass


class ExactResults(BaseModel):
    model_config = ConfigDict(frozen=True)

    T: int
    tau: float
    mean_tau_hat: float
    var_tau_hat: float
    expected_regret: float
    expected_outcome_regret: float
    mean_a1_hat: float
    mean_a0_hat: float
    inv_p_means: list[float]
    inv_q_means: list[float]
    path_count: int
    total_probability: float


class IdentityCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    lhs: float
    rhs: float
    abs_diff: float
    holds: bool


def _path_bits(T: int) -> np.ndarray:
    return np.arange(1 << T, dtype=np.int64)


def _expect(weights: np.ndarray, values) -> float:
    """Exactly rounded sum of weight * value over all paths"""
    return math.fsum((weights * values).tolist())


def _check_cap(T: int, cap: int) -> None:
    if T > cap:
        raise EnumerationCapError(f"enumeration cap exceeded: T={T} > {cap}")


def enumerate_exact(outcomes: OutcomeSchedule, policy: DesignPolicy) -> ExactResults:
    """
    Exact moments of the adaptive HT estimator, expected Neyman regret and E[1/P_t],
    E[1/(1-P_t)] under a deterministic policy.

    Raises:
        EnumerationCapError: T above the enumeration cap
        ProbabilityRangeError: the policy emitted a non-interior probability
    """
    T = outcomes.T
    _check_cap(T, ENUMERATION_CAP)

    bits = _path_bits(T)
    lanes = bits.size
    weights = np.ones(lanes)
    ht_sum = np.zeros(lanes)
    a1_sum = np.zeros(lanes)
    a0_sum = np.zeros(lanes)
    cost_sum = np.zeros(lanes)
    observed_sum = np.zeros(lanes)
    inv_p_means = []
    inv_q_means = []

    def assign(t, p):
        return ((bits >> (t - 1)) & 1).astype(bool)

    for t, p, z, y in rollout(outcomes, policy, lanes, assign):
        # P_t depends on the first t-1 bits only, so each history appears
        # 2^(T-t+1) times among the lanes with the same prefix weight
        multiplicity = float(1 << (T - t + 1))
        inv_p_means.append(_expect(weights, 1.0 / p) / multiplicity)
        inv_q_means.append(_expect(weights, 1.0 / (1.0 - p)) / multiplicity)

        weights = weights * np.where(z, p, 1.0 - p)
        ht_sum += ht_terms(p, z, y)
        a1_sum += treated_moment_terms(p, z, y)
        a0_sum += control_moment_terms(p, z, y)
        cost_sum += cost(outcomes.y1[t - 1], outcomes.y0[t - 1], p)
        observed_sum += y

    tau_hat = ht_sum / T
    mean_tau_hat = _expect(weights, tau_hat)
    var_tau_hat = _expect(weights, np.square(tau_hat - mean_tau_hat))

    stats = finite_stats(outcomes)
    best = max(float(np.sum(outcomes.y1)), float(np.sum(outcomes.y0)))
    total_probability = math.fsum(weights.tolist())
    if abs(total_probability - 1.0) > 1e-12:
        logger.warning("path probabilities sum to %.16g", total_probability)

    return ExactResults(
        T=T,
        tau=stats.tau,
        mean_tau_hat=mean_tau_hat,
        var_tau_hat=var_tau_hat,
        expected_regret=_expect(weights, cost_sum - neyman_benchmark(stats)),
        expected_outcome_regret=_expect(weights, best - observed_sum),
        mean_a1_hat=_expect(weights, a1_sum / T),
        mean_a0_hat=_expect(weights, a0_sum / T),
        inv_p_means=inv_p_means,
        inv_q_means=inv_q_means,
        path_count=lanes,
        total_probability=total_probability,
    )


def variance_from_inverse_moments(outcomes: OutcomeSchedule, results: ExactResults) -> float:
    """
    Var(tau_hat) rebuilt from exact E[1/P_t] and E[1/(1-P_t)]:
    (1/T^2) sum_t [y_t(1)^2 E[1/P_t] + y_t(0)^2 E[1/(1-P_t)] - tau_t^2]
    """
    T = outcomes.T
    terms = (
        np.square(outcomes.y1) * np.asarray(results.inv_p_means)
        + np.square(outcomes.y0) * np.asarray(results.inv_q_means)
        - np.square(outcomes.effects)
    )
    return math.fsum(terms.tolist()) / T ** 2


def exact_regret_ratio_check(outcomes: OutcomeSchedule, policy: DesignPolicy) -> IdentityCheck:
    """
    Compare T*V - T*V_N against E[R_T] / T, which must agree for every design.

    Raises:
        DegenerateArmError: an arm has zero second moment
    """
    neyman = neyman_summary(finite_stats(outcomes))
    results = enumerate_exact(outcomes, policy)
    T = outcomes.T
    lhs = T * results.var_tau_hat - neyman.normalized_neyman_variance
    rhs = results.expected_regret / T
    diff = abs(lhs - rhs)
    return IdentityCheck(
        lhs=lhs,
        rhs=rhs,
        abs_diff=diff,
        holds=diff <= 1e-9 * max(1.0, abs(T * results.var_tau_hat), abs(lhs)),
    )


def auxiliary_cross_moments(outcomes: OutcomeSchedule, policy: DesignPolicy) -> np.ndarray:
    """
    Exact matrix M[t, s] = E[r_t q_s] with r_t = 1{Z_t=1}/P_t and q_s = 1{Z_s=0}/(1-P_s);
    it is 1 off the diagonal and 0 on it for every interior design.
    """
    T = outcomes.T
    _check_cap(T, CROSS_MOMENT_CAP)

    bits = _path_bits(T)
    weights = np.ones(bits.size)
    r = np.zeros((T, bits.size))
    q = np.zeros((T, bits.size))

    def assign(t, p):
        return ((bits >> (t - 1)) & 1).astype(bool)

    for t, p, z, _ in rollout(outcomes, policy, bits.size, assign):
        weights = weights * np.where(z, p, 1.0 - p)
        r[t - 1] = np.where(z, 1.0 / p, 0.0)
        q[t - 1] = np.where(z, 0.0, 1.0 / (1.0 - p))

    matrix = np.empty((T, T))
    for t in range(T):
        for s in range(T):
            matrix[t, s] = _expect(weights, r[t] * q[s])
    return matrix
