"""
Neyman Lab - Design Policies
Sequential treatment-probability policies (Clip-OGD, Bernoulli, Explore-then-Commit,
Neyman oracle) and the design grammar used by the CLI and HTTP API.

Every policy runs a batch of independent lanes at once: lane k sees only its own
assignment/outcome history, so one object can drive R Monte Carlo replications or all
2^T paths of an exact enumeration.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np

from analytics import (
    MomentBounds,
    NeymanLabError,
    OutcomeSchedule,
    check_open_interval,
    finite_stats,
    neyman_summary,
)
from settings import ETC_MIN_PROB


class DesignSpecError(NeymanLabError):
    """Unknown design or malformed design parameters"""


# ---------------------------------------------------------------------------
# Clip-OGD building blocks
# ---------------------------------------------------------------------------

def clip_ogd_default_params(T: int) -> tuple[float, float]:
    """eta = 1/sqrt(T) and alpha = sqrt(5 ln T)"""
    if T < 2:
        raise NeymanLabError("horizon too short for default schedule")
    return 1.0 / math.sqrt(T), math.sqrt(5.0 * math.log(T))


def clip_ogd_general_alpha_step(T: int, alpha: float) -> float:
    """Step size sqrt(e^alpha / T^(1 + 5/alpha)) valid for any alpha >= 2"""
    if alpha < 2.0:
        raise NeymanLabError("alpha must be at least 2")
    if T < 1:
        raise NeymanLabError("horizon must be positive")
    return math.sqrt(math.exp(alpha - (1.0 + 5.0 / alpha) * math.log(T)))


def clip_ogd_moment_informed_step(T: int, bounds: MomentBounds) -> float:
    """Step size e^{(1 + C/c)/4} / (2 sqrt(2) C^2) / sqrt(T)"""
    if T < 1:
        raise NeymanLabError("horizon must be positive")
    return math.exp(bounds.a / 4.0) / (2.0 * math.sqrt(2.0) * bounds.C ** 2) / math.sqrt(T)


def projection_parameter(t: int, alpha: float) -> float:
    """delta_t = (1/2) t^(-1/alpha)"""
    return 0.5 * t ** (-1.0 / alpha)


def project(x, c: float):
    """Pi_c[x] = max(c, min(x, 1 - c))"""
    return np.maximum(c, np.minimum(x, 1.0 - c))


def gradient_estimate(y_obs, z, p):
    """G_t = Y_t^2 (-1{Z_t=1}/P_t^3 + 1{Z_t=0}/(1-P_t)^3)"""
    check_open_interval(p)
    y_sq = np.square(np.asarray(y_obs, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    g = np.where(np.asarray(z, dtype=bool), -y_sq / p ** 3, y_sq / (1.0 - p) ** 3)
    return float(g) if g.ndim == 0 else g


def regret_upper_bound(T: int, eta: float, alpha: float, bounds: MomentBounds) -> float:
    """Expected Neyman regret bound of Clip-OGD for general (eta, alpha) under known moment bounds"""
    a = bounds.a
    return (
        (1.0 / eta) * 4.0 * math.exp(a / 2.0) * math.exp(alpha)
        + eta * 32.0 * bounds.C ** 4 * T ** (1.0 + 5.0 / alpha)
        + 4.0 * bounds.C ** 2 * math.exp(2.0 + a / 2.0) * math.exp(alpha / 2.0) * math.sqrt(T)
    )


@dataclass(frozen=True)
class ClipOgdState:
    """t is the last round played; p_prev and g_prev hold one entry per lane"""
    t: int
    p_prev: np.ndarray
    g_prev: np.ndarray
    eta: float
    alpha: float


def clip_ogd_start(eta: float, alpha: float, lanes: int = 1) -> ClipOgdState:
    """P_0 = 1/2 and G_0 = 0"""
    return ClipOgdState(
        t=0,
        p_prev=np.full(lanes, 0.5),
        g_prev=np.zeros(lanes),
        eta=eta,
        alpha=alpha,
    )


def clip_ogd_next(state: ClipOgdState) -> tuple[np.ndarray, ClipOgdState]:
    """P_t = Pi_{delta_t}[P_{t-1} - eta G_{t-1}]"""
    t = state.t + 1
    delta = projection_parameter(t, state.alpha)
    p = project(state.p_prev - state.eta * state.g_prev, delta)
    return p, replace(state, t=t, p_prev=p)


def clip_ogd_observe(state: ClipOgdState, z, y_obs) -> ClipOgdState:
    return replace(state, g_prev=np.asarray(gradient_estimate(y_obs, z, state.p_prev)).reshape(-1))


# ---------------------------------------------------------------------------
# Explore-then-Commit building blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EtcState:
    """Explore at 1/2 for T0 rounds, then commit once to the plug-in Neyman probability"""
    T0: int
    treated_sq: np.ndarray
    control_sq: np.ndarray
    committed_p: np.ndarray | None = None
    p_min: float = ETC_MIN_PROB


def etc_start(T0: int, lanes: int = 1, p_min: float = ETC_MIN_PROB) -> EtcState:
    if T0 < 1:
        raise NeymanLabError("exploration length must be positive")
    return EtcState(T0=T0, treated_sq=np.zeros(lanes), control_sq=np.zeros(lanes), p_min=p_min)


def etc_commit_probability(state: EtcState) -> np.ndarray:
    """
    p_hat = (1 + sqrt(A0_hat / A1_hat))^-1 from HT second-moment estimates of the
    exploration data; falls back to 1/2 where either estimate is zero.
    """
    a1 = 2.0 * state.treated_sq / state.T0
    a0 = 2.0 * state.control_sq / state.T0
    usable = (a1 > 0.0) & (a0 > 0.0)
    ratio = np.divide(a0, a1, out=np.ones_like(a1), where=usable)
    p_hat = np.where(usable, 1.0 / (1.0 + np.sqrt(ratio)), 0.5)
    return np.clip(p_hat, state.p_min, 1.0 - state.p_min)


def etc_next(state: EtcState, t: int) -> tuple[np.ndarray, EtcState]:
    if t <= state.T0:
        return np.full(state.treated_sq.shape, 0.5), state
    if state.committed_p is None:
        state = replace(state, committed_p=etc_commit_probability(state))
    return state.committed_p, state


def etc_observe(state: EtcState, t: int, z, y_obs) -> EtcState:
    if t > state.T0:
        return state
    z = np.asarray(z, dtype=bool)
    y_sq = np.square(np.asarray(y_obs, dtype=np.float64))
    return replace(
        state,
        treated_sq=state.treated_sq + np.where(z, y_sq, 0.0),
        control_sq=state.control_sq + np.where(z, 0.0, y_sq),
    )


def ceil_cbrt(n: int) -> int:
    """Smallest integer r with r^3 >= n"""
    r = max(0, round(n ** (1.0 / 3.0)))
    while r ** 3 < n:
        r += 1
    while r > 0 and (r - 1) ** 3 >= n:
        r -= 1
    return r


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def bernoulli_next(p: float) -> float:
    check_open_interval(p)
    return float(p)


def neyman_oracle_next(outcomes: OutcomeSchedule) -> float:
    return neyman_summary(finite_stats(outcomes)).p_star


class DesignPolicy(ABC):
    """
    Deterministic map from a lane's history to its next treatment probability.

    Call start(lanes), then for t = 1..T: next_prob(t) followed by observe(t, z, y).
    """

    name = "design"

    def __init__(self, horizon: int):
        if horizon < 1:
            raise NeymanLabError("horizon must be positive")
        self.horizon = horizon
        self.lanes = 1

    @abstractmethod
    def start(self, lanes: int = 1) -> None:
        ...

    @abstractmethod
    def next_prob(self, t: int) -> np.ndarray:
        ...

    def observe(self, t: int, z, y_obs) -> None:
        """Non-adaptive designs ignore feedback"""

    def describe(self) -> dict:
        return {"design": self.name}


class BernoulliPolicy(DesignPolicy):
    name = "bernoulli"

    def __init__(self, horizon: int, p: float):
        super().__init__(horizon)
        self.p = bernoulli_next(p)

    def start(self, lanes: int = 1) -> None:
        self.lanes = lanes

    def next_prob(self, t: int) -> np.ndarray:
        return np.full(self.lanes, self.p)

    def describe(self) -> dict:
        return {"design": self.name, "p": self.p}


class NeymanOraclePolicy(BernoulliPolicy):
    """Infeasible benchmark: Bernoulli at the schedule's own Neyman probability"""
    name = "neyman-oracle"

    def __init__(self, outcomes: OutcomeSchedule):
        super().__init__(outcomes.T, neyman_oracle_next(outcomes))


class ClipOgdPolicy(DesignPolicy):
    name = "clip-ogd"

    def __init__(self, horizon: int, eta: float, alpha: float):
        super().__init__(horizon)
        if eta <= 0.0 or alpha <= 0.0:
            raise NeymanLabError("eta and alpha must be positive")
        self.eta = eta
        self.alpha = alpha
        self.state = clip_ogd_start(eta, alpha)

    def start(self, lanes: int = 1) -> None:
        self.lanes = lanes
        self.state = clip_ogd_start(self.eta, self.alpha, lanes)

    def next_prob(self, t: int) -> np.ndarray:
        if t != self.state.t + 1:
            raise NeymanLabError(f"round {t} requested after round {self.state.t}")
        p, self.state = clip_ogd_next(self.state)
        return p

    def observe(self, t: int, z, y_obs) -> None:
        self.state = clip_ogd_observe(self.state, z, y_obs)

    def describe(self) -> dict:
        return {"design": self.name, "eta": self.eta, "alpha": self.alpha}


class EtcPolicy(DesignPolicy):
    name = "etc"

    def __init__(self, horizon: int, t0: int, p_min: float = ETC_MIN_PROB):
        super().__init__(horizon)
        self.t0 = t0
        self.p_min = p_min
        self.state = etc_start(t0, 1, p_min)

    def start(self, lanes: int = 1) -> None:
        self.lanes = lanes
        self.state = etc_start(self.t0, lanes, self.p_min)

    def next_prob(self, t: int) -> np.ndarray:
        p, self.state = etc_next(self.state, t)
        return p

    def observe(self, t: int, z, y_obs) -> None:
        self.state = etc_observe(self.state, t, z, y_obs)

    def describe(self) -> dict:
        return {"design": self.name, "t0": self.t0, "p_min": self.p_min}


def rollout(outcomes: OutcomeSchedule, policy: DesignPolicy, lanes: int, assign):
    """
    Play a policy on a schedule, one round at a time, for `lanes` independent lanes.

    assign(t, p) returns the boolean assignments for round t. Yields (t, p, z, y);
    the policy observes the round once the consumer resumes the generator.
    """
    if policy.horizon != outcomes.T:
        raise NeymanLabError(f"design built for T={policy.horizon} but schedule has T={outcomes.T}")

    policy.start(lanes)
    for t in range(1, outcomes.T + 1):
        p = np.broadcast_to(np.asarray(policy.next_prob(t), dtype=np.float64), (lanes,))
        check_open_interval(p, f"positivity violated: design emitted a boundary probability at round {t}")
        z = np.asarray(assign(t, p), dtype=bool)
        y = np.where(z, outcomes.y1[t - 1], outcomes.y0[t - 1])
        yield t, p, z, y
        policy.observe(t, z, y)


# ---------------------------------------------------------------------------
# Design grammar
# ---------------------------------------------------------------------------

DESIGN_GRAMMAR = [
    {"spec": "bernoulli:<p>", "description": "Constant probability p in (0,1)"},
    {"spec": "clip-ogd", "description": "Clip-OGD with eta=1/sqrt(T), alpha=sqrt(5 ln T)"},
    {"spec": "clip-ogd:eta=<v>,alpha=<v>", "description": "Clip-OGD with explicit parameters"},
    {"spec": "clip-ogd:alpha=<v>", "description": "Clip-OGD with the general-alpha step size (alpha >= 2)"},
    {"spec": "clip-ogd:scale=<c>", "description": "Clip-OGD with eta=c/sqrt(T)"},
    {"spec": "clip-ogd:c=<v>,C=<v>", "description": "Clip-OGD with the moment-informed step size"},
    {"spec": "etc:t0=<n>", "description": "Explore-then-Commit with T0=n (or t0=cbrt for ceil(T^(1/3)))"},
    {"spec": "neyman-oracle", "description": "Bernoulli at the true Neyman probability (infeasible)"},
]

_CLIP_OGD_KEYS = {"eta", "alpha", "scale", "c", "C"}


@dataclass
class DesignSpec:
    """A parsed design string; build() resolves it against a concrete schedule"""
    text: str
    kind: str
    params: dict = field(default_factory=dict)

    def build(self, outcomes: OutcomeSchedule) -> DesignPolicy:
        return DESIGN_BUILDERS[self.kind](self, outcomes)


def _parse_float(key: str, value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise DesignSpecError(f"{key} must be a number, got {value!r}") from None
    if not math.isfinite(number):
        raise DesignSpecError(f"{key} must be finite")
    return number


def _parse_params(body: str) -> dict:
    params = {}
    for part in body.split(","):
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise DesignSpecError(f"expected key=value, got {part!r}")
        params[key.strip()] = value.strip()
    return params


def parse_design(text: str) -> DesignSpec:
    """
    Parse one design string, e.g. "clip-ogd:eta=0.1,alpha=3" or "etc:t0=cbrt".

    Raises:
        DesignSpecError: unknown design or malformed parameters
    """
    text = text.strip()
    kind, _, body = text.partition(":")

    if kind == "bernoulli":
        if not body:
            raise DesignSpecError("bernoulli needs a probability, e.g. bernoulli:0.5")
        p = _parse_float("p", body)
        if not 0.0 < p < 1.0:
            raise DesignSpecError("bernoulli probability must lie strictly inside (0, 1)")
        return DesignSpec(text, kind, {"p": p})

    if kind == "neyman-oracle":
        if body:
            raise DesignSpecError("neyman-oracle takes no parameters")
        return DesignSpec(text, kind)

    if kind == "clip-ogd":
        raw = _parse_params(body) if body else {}
        unknown = set(raw) - _CLIP_OGD_KEYS
        if unknown:
            raise DesignSpecError(f"unknown clip-ogd parameters: {sorted(unknown)}")
        params = {key: _parse_float(key, value) for key, value in raw.items()}
        if any(v <= 0.0 for v in params.values()):
            raise DesignSpecError("clip-ogd parameters must be positive")
        if ("c" in params) != ("C" in params):
            raise DesignSpecError("moment bounds need both c and C")
        step_sources = sum(["eta" in params, "scale" in params, "c" in params])
        if step_sources > 1:
            raise DesignSpecError("choose one of eta, scale, or c/C for the step size")
        if "c" in params:
            MomentBounds(params["c"], params["C"])
        return DesignSpec(text, kind, params)

    if kind == "etc":
        raw = _parse_params(body) if body else {}
        if set(raw) != {"t0"}:
            raise DesignSpecError("etc needs exactly t0=<n> or t0=cbrt")
        t0 = raw["t0"]
        if t0 != "cbrt":
            if not t0.isdigit() or int(t0) < 1:
                raise DesignSpecError("t0 must be a positive integer or 'cbrt'")
            t0 = int(t0)
        return DesignSpec(text, kind, {"t0": t0})

    raise DesignSpecError(f"unknown design: {text!r}")


def _build_bernoulli(spec: DesignSpec, outcomes: OutcomeSchedule) -> DesignPolicy:
    return BernoulliPolicy(outcomes.T, spec.params["p"])


def _build_oracle(spec: DesignSpec, outcomes: OutcomeSchedule) -> DesignPolicy:
    return NeymanOraclePolicy(outcomes)


def _build_clip_ogd(spec: DesignSpec, outcomes: OutcomeSchedule) -> DesignPolicy:
    T = outcomes.T
    params = spec.params

    if "eta" in params and "alpha" in params:
        return ClipOgdPolicy(T, params["eta"], params["alpha"])

    if set(params) == {"alpha"}:
        alpha = params["alpha"]
        return ClipOgdPolicy(T, clip_ogd_general_alpha_step(T, alpha), alpha)

    eta, alpha = clip_ogd_default_params(T)
    alpha = params.get("alpha", alpha)
    if "eta" in params:
        eta = params["eta"]
    elif "scale" in params:
        eta = params["scale"] / math.sqrt(T)
    elif "c" in params:
        eta = clip_ogd_moment_informed_step(T, MomentBounds(params["c"], params["C"]))
    return ClipOgdPolicy(T, eta, alpha)


def _build_etc(spec: DesignSpec, outcomes: OutcomeSchedule) -> DesignPolicy:
    t0 = spec.params["t0"]
    if t0 == "cbrt":
        t0 = ceil_cbrt(outcomes.T)
    return EtcPolicy(outcomes.T, t0)


DESIGN_BUILDERS = {
    "bernoulli": _build_bernoulli,
    "neyman-oracle": _build_oracle,
    "clip-ogd": _build_clip_ogd,
    "etc": _build_etc,
}


def build_policy(design: str | DesignSpec, outcomes: OutcomeSchedule) -> DesignPolicy:
    """Parse (if needed) and resolve a design against a schedule"""
    spec = parse_design(design) if isinstance(design, str) else design
    return spec.build(outcomes)
