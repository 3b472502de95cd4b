import math
from dataclasses import asdict
from typing import Annotated, Any

from fastapi import APIRouter, Depends, HTTPException, Query
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from convex_evasion.core.config import AlgorithmId, ExperimentConfig, get_config
from convex_evasion.core.errors import InvalidInputError
from convex_evasion.geometry.bounds import (
    enclosed_lp_radius,
    l2_query_lower_bound,
    lp_query_lower_bound,
    multiline_epsilon_threshold,
)
from convex_evasion.geometry.cost import BoundMode
from convex_evasion.harness.experiments import TrialRecord, run_evade
from convex_evasion.harness.verify import SUITE_ALIASES, SUITES, VerifyOptions, run_verify

router = APIRouter()

MAX_DIMENSION = 10_000


class EvadeRequest(BaseModel):
    """A partial experiment merged over the service configuration."""

    model_config = ConfigDict(extra="forbid")

    algorithm: AlgorithmId | None = None
    classifier: dict[str, Any] | None = None
    dimension: int | None = None
    exponent: float | None = None
    weights: list[float] | None = None
    target: list[float] | None = None
    mode: BoundMode | None = None
    epsilon: float | None = None
    eta: float | None = None
    lower_bound: float | None = None
    bootstrap_negative: bool | None = None
    kmls_steps: int | None = None
    seed: int | None = None


def merge_request(config: ExperimentConfig, request: EvadeRequest) -> ExperimentConfig:
    data = config.model_dump()
    update = request.model_dump(exclude_none=True)
    if update.get("dimension", config.dimension) != config.dimension:
        data.update(weights=None, target=None)
        data["classifier"]["normal"] = None
    data["classifier"].update(update.pop("classifier", {}))
    data.update(update)
    # The service never keeps transcripts or traces in memory for a response.
    data.update(record_transcript=False, trace=False)
    return ExperimentConfig.model_validate(data)


@router.post("/evade", response_model=TrialRecord)
def evade(request: EvadeRequest, config: ExperimentConfig = Depends(get_config)):
    try:
        merged = merge_request(config, request)
    except ValidationError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return run_evade(merged).record


@router.get("/verify/{suite}")
def verify(
    suite: str,
    seed: Annotated[int, Query(ge=0)] = 0,
    cases: Annotated[int, Query(ge=1, le=1000)] = 100,
    inject_nonconvex: bool = False,
) -> dict[str, Any]:
    if suite not in SUITES and suite not in SUITE_ALIASES:
        raise HTTPException(status_code=404, detail=f"Unknown suite {suite!r}")
    options = VerifyOptions(seed=seed, cases=cases, inject_nonconvex=inject_nonconvex)
    report = run_verify(suite, options)
    return {"passed": report.passed, "suites": [asdict(result) for result in report.suites]}


def _calculate(function, *args) -> float | None:
    """The calculator's value, or None where its preconditions fail or it overflows."""
    try:
        value = function(*args)
    except (InvalidInputError, OverflowError):
        return None
    return value if math.isfinite(value) else None


class BoundsReport(BaseModel):
    dimension: int
    exponent: float
    epsilon: float
    enclosed_radius: float | None = None
    multiline_epsilon_threshold: float | None = None
    l2_query_lower_bound: float | None = None
    lp_query_lower_bound: float | None = None
    certifiable: bool = Field(description="Whether multiline search can reach epsilon.")


@router.get("/bounds")
def bounds(
    dimension: Annotated[int, Query(ge=1, le=MAX_DIMENSION)],
    exponent: Annotated[float, Query(gt=0)] = 2.0,
    epsilon: Annotated[float, Query(gt=0)] = 0.1,
) -> BoundsReport:
    threshold = _calculate(multiline_epsilon_threshold, dimension, exponent)
    return BoundsReport(
        dimension=dimension,
        exponent=exponent,
        epsilon=epsilon,
        enclosed_radius=_calculate(enclosed_lp_radius, dimension, exponent),
        multiline_epsilon_threshold=threshold,
        l2_query_lower_bound=_calculate(l2_query_lower_bound, dimension, epsilon),
        lp_query_lower_bound=_calculate(lp_query_lower_bound, dimension, exponent, epsilon),
        certifiable=threshold is not None and epsilon > threshold,
    )
