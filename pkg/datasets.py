"""
Neyman Lab - Outcome Data
CSV ingestion, the impute / normalize / replicate pipeline for observed experiments,
and synthetic schedules (i.i.d. scaled, ETC-adversarial, constant-effect)
"""
import logging
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from analytics import LengthMismatchError, NeymanLabError, OutcomeSchedule
from estimators import Trace
from streams import GENERATOR_STREAM, IMPUTE_STREAM, MASK64, SHUFFLE_STREAM, normal_deviates, substream

logger = logging.getLogger(__name__)

SCHEDULE_COLUMNS = ["y1", "y0"]
OBSERVED_COLUMNS = ["y", "z"]
TRACE_COLUMNS = ["p", "z", "y"]

# Round-trips every float64 exactly
FLOAT_FORMAT = "%.17g"


class DataFormatError(NeymanLabError):
    """Malformed CSV input; `line` is 1-based and counts the header"""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """Observed outcomes and assignments from a completed experiment; input to impute()"""
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        z = np.asarray(self.z).reshape(-1)
        if y.size != z.size:
            raise LengthMismatchError(f"y has {y.size} entries but z has {z.size}")
        if y.size == 0:
            raise NeymanLabError("empty dataset")
        if not np.all((z == 0) | (z == 1)):
            raise NeymanLabError("assignments must be 0 or 1")
        if not np.all(np.isfinite(y)):
            raise NeymanLabError("observed outcomes must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z.astype(bool))

    @property
    def T(self) -> int:
        return int(self.y.size)


class ImputeConfig(BaseModel):
    """Constant-effect imputation model: y(1) - y(0) = tau + gamma_t, gamma_t ~ N(0, sigma^2)"""
    model_config = ConfigDict(extra="forbid")

    tau: float
    sigma: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default=0, ge=0, le=MASK64)


def parse_key_values(text: str | None) -> dict[str, str]:
    """"tau=0.5,sigma=0.1" -> {"tau": "0.5", "sigma": "0.1"}"""
    if not text:
        return {}
    params = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise NeymanLabError(f"expected key=value, got {part!r}")
        params[key.strip()] = value.strip()
    return params


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _read_frame(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError("missing header", line=1) from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DataFormatError("wrong number of fields", line=int(match.group(1)) if match else None) from None


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Parse one column as float64, rejecting blanks, junk, and non-finite values"""
    # float() is correctly rounded, so values written with FLOAT_FORMAT reload bit for bit
    values = frame[column].str.strip().map(_parse_float).to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise DataFormatError(f"{column} is not a finite number: {frame[column].iloc[row]!r}", line=row + 2)
    return values


def _assignment_column(frame: pd.DataFrame) -> np.ndarray:
    values = _numeric_column(frame, "z")
    bad = np.flatnonzero((values != 0.0) & (values != 1.0))
    if bad.size:
        raise DataFormatError("z must be 0 or 1", line=int(bad[0]) + 2)
    return values.astype(bool)


def _header(frame: pd.DataFrame) -> list[str]:
    return [str(c).strip() for c in frame.columns]


def load_csv(path) -> OutcomeSchedule | ObservedDataset:
    """
    Load a potential-outcome schedule (header y1,y0) or an observed dataset (header y,z).

    Raises:
        DataFormatError: bad header, malformed row, or non-finite value
        OSError: the file cannot be read
    """
    frame = _read_frame(path)
    frame.columns = _header(frame)
    if list(frame.columns) == SCHEDULE_COLUMNS:
        outcomes = OutcomeSchedule(_numeric_column(frame, "y1"), _numeric_column(frame, "y0"))
        logger.info("loaded schedule T=%d from %s", outcomes.T, path)
        return outcomes
    if list(frame.columns) == OBSERVED_COLUMNS:
        data = ObservedDataset(_numeric_column(frame, "y"), _assignment_column(frame))
        logger.info("loaded observed dataset n=%d from %s", data.T, path)
        return data
    raise DataFormatError(f"header must be 'y1,y0' or 'y,z', got {','.join(frame.columns)!r}", line=1)


def load_schedule(path) -> OutcomeSchedule:
    loaded = load_csv(path)
    if not isinstance(loaded, OutcomeSchedule):
        raise DataFormatError("expected a schedule file with header 'y1,y0'", line=1)
    return loaded


def load_trace(path) -> Trace:
    """Read a realized experiment with header p,z,y"""
    frame = _read_frame(path)
    frame.columns = _header(frame)
    if list(frame.columns) != TRACE_COLUMNS:
        raise DataFormatError(f"header must be 'p,z,y', got {','.join(frame.columns)!r}", line=1)
    return Trace(p=_numeric_column(frame, "p"), z=_assignment_column(frame), y_obs=_numeric_column(frame, "y"))


def write_schedule(outcomes: OutcomeSchedule, path) -> None:
    frame = pd.DataFrame({"y1": outcomes.y1, "y0": outcomes.y0})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_trace(trace: Trace, path) -> None:
    frame = pd.DataFrame({"p": trace.p, "z": trace.z.astype(int), "y": trace.y_obs})
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def impute(data: ObservedDataset, config: ImputeConfig) -> OutcomeSchedule:
    """Fill in the missing arm under the constant-effect model with seeded normal noise"""
    gamma = config.sigma * normal_deviates(substream(config.seed, IMPUTE_STREAM), data.T)
    shift = config.tau + gamma
    y1 = np.where(data.z, data.y, data.y + shift)
    y0 = np.where(data.z, data.y - shift, data.y)
    return OutcomeSchedule(y1, y0)


def normalize(outcomes: OutcomeSchedule) -> OutcomeSchedule:
    """Joint min/max rescaling of both arms onto [0, 1]; a constant schedule maps to 0.5"""
    low = min(float(outcomes.y1.min()), float(outcomes.y0.min()))
    high = max(float(outcomes.y1.max()), float(outcomes.y0.max()))
    if high == low:
        half = np.full(outcomes.T, 0.5)
        return OutcomeSchedule(half, half)
    span = high - low
    return OutcomeSchedule((outcomes.y1 - low) / span, (outcomes.y0 - low) / span)


def replicate(outcomes: OutcomeSchedule, k: int) -> OutcomeSchedule:
    if k < 1:
        raise NeymanLabError("replication count must be positive")
    return OutcomeSchedule(np.tile(outcomes.y1, k), np.tile(outcomes.y0, k))


def flip_prefix(outcomes: OutcomeSchedule, n: int) -> OutcomeSchedule:
    """Swap the two arms of the first n units"""
    if not 0 <= n <= outcomes.T:
        raise NeymanLabError(f"flip length {n} outside [0, {outcomes.T}]")
    y1 = outcomes.y1.copy()
    y0 = outcomes.y0.copy()
    y1[:n], y0[:n] = outcomes.y0[:n], outcomes.y1[:n]
    return OutcomeSchedule(y1, y0)


def shuffle(outcomes: OutcomeSchedule, seed: int) -> OutcomeSchedule:
    """Seeded permutation of the units"""
    order = substream(seed, SHUFFLE_STREAM).permutation(outcomes.T)
    return OutcomeSchedule(outcomes.y1[order], outcomes.y0[order])


# ---------------------------------------------------------------------------
# Synthetic schedules
# ---------------------------------------------------------------------------

def _float_param(params: dict, key: str, default: float, *aliases: str) -> float:
    for name in (key, *aliases):
        if name in params:
            try:
                return float(params[name])
            except (TypeError, ValueError):
                raise NeymanLabError(f"{name} must be a number, got {params[name]!r}") from None
    return default


def _uniform_arm(T: int, seed: int, params: dict) -> np.ndarray:
    a = _float_param(params, "a", 0.25)
    b = _float_param(params, "b", 1.0)
    if b < a:
        raise NeymanLabError("uniform range needs a <= b")
    return a + (b - a) * substream(seed, GENERATOR_STREAM).random(T)


def _gen_iid_scaled(T: int, seed: int, params: dict) -> OutcomeSchedule:
    """y0 ~ U[a, b] i.i.d., y1 = lam * y0, so p* = 1 / (1 + 1/lam)"""
    lam = _float_param(params, "lam", 2.0, "lambda")
    y0 = _uniform_arm(T, seed, params)
    return OutcomeSchedule(lam * y0, y0)


def _gen_etc_adversarial(T: int, seed: int, params: dict) -> OutcomeSchedule:
    """Prefix y1=low, y0=high then suffix y1=high, y0=low: the exploration window points the wrong way"""
    t0 = int(_float_param(params, "t0", max(1, T // 4)))
    if not 0 <= t0 <= T:
        raise NeymanLabError(f"t0 must lie in [0, {T}]")
    low = _float_param(params, "low", 1.0)
    high = _float_param(params, "high", 2.0)
    if not 0.0 <= low < high:
        raise NeymanLabError("levels need 0 <= low < high")
    prefix = np.arange(T) < t0
    y1 = np.where(prefix, low, high)
    y0 = np.where(prefix, high, low)
    return OutcomeSchedule(y1, y0)


def _gen_constant_effect(T: int, seed: int, params: dict) -> OutcomeSchedule:
    tau = _float_param(params, "tau", 0.5)
    y0 = _uniform_arm(T, seed, params)
    return OutcomeSchedule(y0 + tau, y0)


GENERATORS = {
    "iid-scaled": _gen_iid_scaled,
    "etc-adversarial": _gen_etc_adversarial,
    "constant-effect": _gen_constant_effect,
}


def gen_synthetic(kind: str, T: int, seed: int = 0, params: dict | None = None) -> OutcomeSchedule:
    """
    Build a synthetic schedule.

    Args:
        kind: One of GENERATORS
        T: Number of units
        seed: Seed for the uniform draws
        params: Generator parameters (a, b, lam, t0, low, high, tau), strings or numbers

    Raises:
        NeymanLabError: unknown kind or bad parameters
    """
    if kind not in GENERATORS:
        raise NeymanLabError(f"unknown generator kind: {kind!r}; choose from {', '.join(GENERATORS)}")
    if T < 1:
        raise NeymanLabError("horizon must be positive")
    outcomes = GENERATORS[kind](T, seed, params or {})
    logger.info("generated %s schedule T=%d", kind, T)
    return outcomes
