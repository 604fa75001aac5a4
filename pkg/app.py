"""
Neyman Lab - Web API
FastAPI surface over the estimators, exact enumeration, and Monte Carlo harness
"""
import logging

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, ValidationError

from analytics import DegenerateArmError, NeymanLabError, OutcomeSchedule
from designs import DESIGN_GRAMMAR, parse_design
from estimators import EffectEstimate, IntervalEstimate, Trace, analyze_trace
from oracle import ExactResults, IdentityCheck, enumerate_exact, exact_regret_ratio_check, variance_from_inverse_moments
from settings import DEFAULT_LEVELS, SPEC_VERSION
from simulation import SimConfig, SimSummary, monte_carlo

logger = logging.getLogger(__name__)

# Keeps a single request from tying up the server
MAX_API_REPLICATIONS = 20000

app = FastAPI(title="Neyman Lab", description="Adaptive Neyman allocation experiments")


class ScheduleRequest(BaseModel):
    y1: list[float]
    y0: list[float]
    design: str = "clip-ogd"


class AnalyzeRequest(BaseModel):
    p: list[float]
    z: list[int]
    y: list[float]
    levels: list[float] = list(DEFAULT_LEVELS)


class AnalyzeResponse(BaseModel):
    T: int
    estimate: EffectEstimate
    intervals: list[IntervalEstimate]


class ExactResponse(BaseModel):
    design: str
    resolved: dict
    exact: ExactResults
    variance_from_inverse_moments: float
    identity: IdentityCheck | None


class SimulateRequest(ScheduleRequest):
    replications: int = Field(default=2000, ge=1, le=MAX_API_REPLICATIONS)
    seed: int = 0
    levels: list[float] = list(DEFAULT_LEVELS)


def _bad_request(e: Exception) -> HTTPException:
    logger.info("rejected request: %s", e)
    return HTTPException(status_code=400, detail=str(e))


@app.get("/")
async def home():
    """Service banner"""
    return {"service": "Neyman Lab", "spec_version": SPEC_VERSION}


@app.get("/api/designs")
async def designs():
    """Design strings accepted by the other endpoints"""
    return {"designs": DESIGN_GRAMMAR}


@app.post("/api/analyze", response_model=AnalyzeResponse, response_model_by_alias=True)
def analyze(request: AnalyzeRequest):
    """Point estimate and Chebyshev / Wald intervals for one realized trace"""
    try:
        trace = Trace(p=request.p, z=request.z, y_obs=request.y)
        estimate, intervals = analyze_trace(trace, request.levels)
    except (NeymanLabError, ValidationError) as e:
        raise _bad_request(e)

    return AnalyzeResponse(T=trace.T, estimate=estimate, intervals=intervals)


@app.post("/api/exact", response_model=ExactResponse)
def exact(request: ScheduleRequest):
    """Exact enumeration of a small schedule plus the regret-ratio identity check"""
    try:
        outcomes = OutcomeSchedule(request.y1, request.y0)
        spec = parse_design(request.design)
        policy = spec.build(outcomes)
        results = enumerate_exact(outcomes, policy)
        try:
            identity = exact_regret_ratio_check(outcomes, spec.build(outcomes))
        except DegenerateArmError:
            identity = None
    except NeymanLabError as e:
        raise _bad_request(e)

    return ExactResponse(
        design=spec.text,
        resolved=policy.describe(),
        exact=results,
        variance_from_inverse_moments=variance_from_inverse_moments(outcomes, results),
        identity=identity,
    )


@app.post("/api/simulate", response_model=SimSummary)
def simulate(request: SimulateRequest):
    """Monte Carlo summary of one design on the posted schedule"""
    try:
        outcomes = OutcomeSchedule(request.y1, request.y0)
        config = SimConfig(
            replications=request.replications,
            seed=request.seed,
            policy_spec=request.design,
            coverage_levels=request.levels,
        )
        return monte_carlo(outcomes, config.policy_spec, config)
    except (NeymanLabError, ValidationError) as e:
        raise _bad_request(e)
