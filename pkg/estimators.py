"""
Neyman Lab - Estimators
Adaptive Horvitz-Thompson effect estimate, the plug-in variance-bound estimate, and
Chebyshev / Wald confidence intervals from a realized trace
"""
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field
from scipy.special import ndtri

from analytics import FloatArray, LengthMismatchError, NeymanLabError, check_open_interval


@dataclass(frozen=True, eq=False)
class Trace:
    """
    One realized experiment (P_t, Z_t, Y_t).

    The arrays may also be 2-D with one replication per row; every estimator works
    along the last axis.
    """
    p: FloatArray
    z: np.ndarray
    y_obs: FloatArray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        z = np.asarray(self.z)
        y = np.asarray(self.y_obs, dtype=np.float64)
        if not (p.shape == z.shape == y.shape) or p.ndim == 0:
            raise LengthMismatchError("trace columns must have equal lengths")
        if p.shape[-1] == 0:
            raise NeymanLabError("empty trace")
        if not np.all((z == 0) | (z == 1)):
            raise NeymanLabError("assignments must be 0 or 1")
        if not np.all(np.isfinite(y)):
            raise NeymanLabError("observed outcomes must be finite")
        check_open_interval(p, "positivity violated")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "z", z.astype(bool))
        object.__setattr__(self, "y_obs", y)

    @property
    def T(self) -> int:
        return int(self.p.shape[-1])


class IntervalEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float
    level: float
    kind: Literal["chebyshev", "wald"]

    @computed_field
    @property
    def conjectural(self) -> bool:
        """Wald coverage rests on an unproven central limit theorem"""
        return self.kind == "wald"


class EffectEstimate(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    tau_hat: float
    A1_hat: float = Field(ge=0.0, serialization_alias="a1_hat")
    A0_hat: float = Field(ge=0.0, serialization_alias="a0_hat")
    normalized_vb_hat: float = Field(ge=0.0, serialization_alias="t_vb_hat")


# Per-round terms; the estimators are their means over t

def ht_terms(p, z, y_obs):
    """Y_t (1{Z_t=1}/P_t - 1{Z_t=0}/(1-P_t))"""
    return np.where(z, y_obs / p, -y_obs / (1.0 - p))


def treated_moment_terms(p, z, y_obs):
    return np.where(z, np.square(y_obs) / p, 0.0)


def control_moment_terms(p, z, y_obs):
    return np.where(z, 0.0, np.square(y_obs) / (1.0 - p))


def variance_bound_from_moments(a1_hat, a0_hat):
    """T * VB_hat = 4 sqrt(A1_hat * A0_hat)"""
    return 4.0 * np.sqrt(np.asarray(a1_hat) * np.asarray(a0_hat))


def _collapse(value):
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


def adaptive_ht(trace: Trace):
    """tau_hat = (1/T) sum_t Y_t (1{Z_t=1}/P_t - 1{Z_t=0}/(1-P_t))"""
    return _collapse(np.mean(ht_terms(trace.p, trace.z, trace.y_obs), axis=-1))


def variance_bound_estimate(trace: Trace):
    """(A1_hat, A0_hat, T * VB_hat); zero whenever an arm was never observed"""
    a1 = np.mean(treated_moment_terms(trace.p, trace.z, trace.y_obs), axis=-1)
    a0 = np.mean(control_moment_terms(trace.p, trace.z, trace.y_obs), axis=-1)
    return _collapse(a1), _collapse(a0), _collapse(variance_bound_from_moments(a1, a0))


def estimate_effect(trace: Trace) -> EffectEstimate:
    if trace.p.ndim != 1:
        raise NeymanLabError("estimate_effect expects a single trace")
    a1, a0, nvb = variance_bound_estimate(trace)
    return EffectEstimate(tau_hat=adaptive_ht(trace), A1_hat=a1, A0_hat=a0, normalized_vb_hat=nvb)


def chebyshev_multiplier(level_alpha: float) -> float:
    if not 0.0 < level_alpha <= 1.0:
        raise NeymanLabError("Chebyshev level must lie in (0, 1]")
    return 1.0 / math.sqrt(level_alpha)


def wald_multiplier(level_alpha: float) -> float:
    if not 0.0 < level_alpha < 1.0:
        raise NeymanLabError("Wald level must lie in (0, 1)")
    return float(ndtri(1.0 - level_alpha / 2.0))


def half_width(normalized_vb_hat, T: int, multiplier: float):
    """multiplier * sqrt(VB_hat) with VB_hat = (T * VB_hat) / T"""
    return multiplier * np.sqrt(np.asarray(normalized_vb_hat) / T)


def chebyshev_interval(tau_hat: float, normalized_vb_hat: float, T: int, level_alpha: float) -> IntervalEstimate:
    """tau_hat +/- alpha^(-1/2) sqrt(VB_hat)"""
    width = float(half_width(normalized_vb_hat, T, chebyshev_multiplier(level_alpha)))
    return IntervalEstimate(lo=tau_hat - width, hi=tau_hat + width, level=level_alpha, kind="chebyshev")


def wald_interval(tau_hat: float, normalized_vb_hat: float, T: int, level_alpha: float) -> IntervalEstimate:
    """tau_hat +/- Phi^-1(1 - alpha/2) sqrt(VB_hat)"""
    width = float(half_width(normalized_vb_hat, T, wald_multiplier(level_alpha)))
    return IntervalEstimate(lo=tau_hat - width, hi=tau_hat + width, level=level_alpha, kind="wald")


INTERVAL_BUILDERS = {
    "chebyshev": (chebyshev_interval, chebyshev_multiplier),
    "wald": (wald_interval, wald_multiplier),
}


def analyze_trace(trace: Trace, levels) -> tuple[EffectEstimate, list[IntervalEstimate]]:
    """Point estimate plus both interval kinds at every requested level"""
    estimate = estimate_effect(trace)
    intervals = [
        build(estimate.tau_hat, estimate.normalized_vb_hat, trace.T, level)
        for kind, (build, _) in INTERVAL_BUILDERS.items()
        for level in levels
    ]
    return estimate, intervals
