"""Seeded end-to-end trials and benchmark sweeps over synthetic classifiers.

A trial builds its classifier from ``seed`` alone, so every algorithm in a
sweep faces the same instance; the search's own randomness is drawn from a
stream derived from the algorithm id and the seed.
"""

import logging
import math
import time
import zlib
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Annotated

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from convex_evasion.core.config import AlgorithmId, ClassifierFamily, ExperimentConfig
from convex_evasion.core.errors import (
    DegenerateBodyError,
    InvalidInputError,
    NotAvailableError,
    QueryBudgetExceeded,
    SearchExhaustedError,
    UnsoundBoundError,
)
from convex_evasion.geometry.bounds import kmls_query_ceiling, mls_query_ceiling
from convex_evasion.geometry.cost import (
    BoundMode,
    BoundPair,
    CostSpec,
    Point,
    evaluate_cost,
)
from convex_evasion.harness.reports import write_rows
from convex_evasion.oracles.brute_force import MAX_DIMENSION, brute_force_mac
from convex_evasion.oracles.classifiers import (
    HalfspaceClassifier,
    OpenCostBallClassifier,
    SyntheticClassifier,
    analytic_mac,
    halfspace_box,
    random_polytope,
)
from convex_evasion.oracles.membership import MembershipOracle, QueryLedger
from convex_evasion.search.directions import handle_degenerate_weights
from convex_evasion.search.negative import set_search
from convex_evasion.search.positive import (
    EvasionResult,
    SearchEngine,
    Termination,
    convex_search,
    establish_bounds,
    linear_search,
)
from convex_evasion.search.sampling import FeasibleBody, approximate_rounding

log = logging.getLogger(__name__)

# Grid cells per box side when the MAC has to be found by brute force.
BRUTE_FORCE_CELLS = 200


class MacSource(StrEnum):
    ANALYTIC = "analytic"
    BRUTE_FORCE = "brute-force"
    NONE = "none"


class TrialRecord(BaseModel):
    """One CSV row: the measurements of a single seeded trial.

    ``queries`` counts every oracle call of the trial, bootstraps
    included; ``bound_ok`` compares the search engine's own calls with
    its worst-case ceiling.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    algorithm: AlgorithmId
    dimension: int = Field(alias="D")
    exponent: float = Field(alias="p")
    epsilon: float
    seed: int
    queries: int
    iterations: int
    final_cost: float
    mac_reference: float
    ratio: float
    bound_ok: bool
    wall_ms: float
    termination: Termination
    mac_source: MacSource

    def row(self) -> dict[str, object]:
        return self.model_dump(by_alias=True)


TRIAL_FIELDS = [info.alias or name for name, info in TrialRecord.model_fields.items()]

SUMMARY_FIELDS = [
    "algorithm",
    "D",
    "epsilon",
    "trials",
    "converged",
    "median_queries",
    "median_steps",
    "kmls_ceiling",
    "mls_ceiling",
    "bound_ok",
]


@dataclass(frozen=True)
class Instance:
    classifier: SyntheticClassifier
    negative: Point


@dataclass
class TrialOutcome:
    """The search result (None when the configuration was rejected) and its row."""

    result: EvasionResult | None
    record: TrialRecord
    start: BoundPair | None = None
    transcript: list | None = None

    @property
    def steps(self) -> int:
        """Bisection steps the starting gap needed at the configured accuracy."""
        if self.start is None:
            return 0
        return self.start.steps(self.record.epsilon)


class BenchSweep(BaseModel):
    """The grid of a benchmark: every combination is one trial."""

    name: str = "bench"
    algorithms: Annotated[list[AlgorithmId], Field(min_length=1)]
    dimensions: Annotated[list[Annotated[int, Field(ge=1)]], Field(min_length=1)]
    epsilons: Annotated[list[Annotated[float, Field(gt=0)]], Field(min_length=1)]
    seeds: Annotated[list[Annotated[int, Field(ge=0)]], Field(min_length=1)]


@dataclass
class BenchReport:
    trials: Path
    summary: Path
    outcomes: list[TrialOutcome]
    summary_rows: list[dict[str, object]]


def instance_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def search_rng(algorithm: AlgorithmId, seed: int) -> np.random.Generator:
    """The trial's search stream, one per (algorithm, seed)."""
    return np.random.default_rng([zlib.crc32(algorithm.value.encode()), seed])


def _beyond(normal: ArrayLike, offset: float, spec: CostSpec) -> Point:
    """A point twice as far past ``(x - t) . w >= offset`` as the boundary.

    Only mutable coordinates move, along the normal's own components.
    """
    normal = np.asarray(normal, dtype=float)
    mutable = np.where(np.isinf(spec.weights), 0.0, normal)
    reach = float(mutable @ normal)
    if reach <= 0:
        raise InvalidInputError("the classifier cannot be reached by mutable coordinates")
    return spec.target + 2.0 * offset * mutable / reach


def _axis_point(spec: CostSpec, cost: float) -> Point:
    """``target + cost·e_d/s_d`` on the first coordinate with a finite positive weight."""
    usable = np.flatnonzero(np.isfinite(spec.weights) & (spec.weights > 0))
    if usable.size == 0:
        raise InvalidInputError("no coordinate has a finite, positive weight")
    axis = int(usable[0])
    point = spec.target.copy()
    point[axis] += cost / spec.coordinate_scale()[axis]
    return point


def build_instance(
    config: ExperimentConfig, spec: CostSpec, rng: np.random.Generator
) -> Instance:
    """The configured classifier and a negative example at roughly twice its MAC."""
    settings = config.classifier
    dimension = spec.dimension
    match settings.family:
        case ClassifierFamily.HALFSPACE:
            if settings.normal is not None:
                normal = np.asarray(settings.normal, dtype=float)
            else:
                normal = rng.standard_normal(dimension)
            unit = normal / np.linalg.norm(normal)
            anchor = spec.target + settings.displacement * unit
            classifier = HalfspaceClassifier(normal, anchor)
            offset = float((anchor - spec.target) @ normal)
            return Instance(classifier, _beyond(normal, offset, spec))
        case ClassifierFamily.COST_BALL:
            classifier = OpenCostBallClassifier(spec, settings.threshold)
            return Instance(classifier, _axis_point(spec, 2.0 * settings.threshold))
        case ClassifierFamily.POLYTOPE:
            distances = settings.displacement * rng.uniform(1.0, 1.5, size=settings.faces)
            classifier = random_polytope(rng, spec, settings.faces, distances)
            nearest = int(np.argmin(distances))
            face = classifier.faces[nearest]
            return Instance(classifier, _beyond(face.normal, distances[nearest], spec))
        case ClassifierFamily.HALFSPACE_BOX:
            threshold, half_width = settings.displacement, settings.half_width
            classifier = halfspace_box(dimension, threshold, half_width)
            negative = np.zeros(dimension)
            negative[0] = min(2.0 * threshold, (threshold + half_width) / 2.0)
            return Instance(classifier, negative)
    raise InvalidInputError(f"unknown classifier family {settings.family!r}")


def reference_mac(
    classifier: SyntheticClassifier, spec: CostSpec, reach: float
) -> tuple[float, MacSource]:
    """Closed-form MAC, else brute force within cost ``reach`` at D <= 3."""
    try:
        return analytic_mac(classifier, spec), MacSource.ANALYTIC
    except (NotAvailableError, InvalidInputError):
        pass
    if (
        spec.dimension > MAX_DIMENSION
        or spec.exponent < 1
        or not spec.has_regular_weights
        or not 0 < reach < math.inf
    ):
        return math.nan, MacSource.NONE
    half = reach / spec.coordinate_scale()
    resolution = 2.0 * float(half.max()) / BRUTE_FORCE_CELLS
    try:
        interval = brute_force_mac(
            classifier, spec, resolution, (spec.target - half, spec.target + half)
        )
    except SearchExhaustedError:
        return math.nan, MacSource.NONE
    return interval.hi, MacSource.BRUTE_FORCE


def _unbounded(witness: Point, termination: Termination) -> EvasionResult:
    return EvasionResult(
        witness=witness, bounds=None, queries=0, iterations=0, termination=termination
    )


def _positive_search(
    config: ExperimentConfig, spec: CostSpec, instance: Instance, oracle: MembershipOracle
) -> tuple[EvasionResult, BoundPair | None]:
    engine = SearchEngine.KMLS if config.algorithm is AlgorithmId.KMLS else SearchEngine.MLS
    options = {
        "mode": config.mode,
        "engine": engine,
        "kmls_steps": config.kmls_steps,
        "max_iterations": config.budgets.max_iterations,
        "trace": config.trace,
    }
    negative = None if config.bootstrap_negative else instance.negative
    lower = config.lower_bound
    if lower is None and config.mode is BoundMode.ADDITIVE:
        lower = 0.0
    directions = None
    if negative is None or lower is None:
        if np.any(spec.weights == 0):
            raise InvalidInputError(
                "free coordinates need both a negative example and a lower bound"
            )
        directions = handle_degenerate_weights(spec).directions_for(spec)
        boot = establish_bounds(
            directions,
            oracle,
            negative=negative,
            lower=lower,
            mode=config.mode,
            max_doublings=config.budgets.max_doublings,
        )
        if boot.bounds is None:
            witness = spec.target.copy() if boot.witness is None else boot.witness
            return _unbounded(witness, boot.termination), None
        negative, lower, directions = boot.witness, boot.bounds.lower, boot.directions

    start = BoundPair(lower, evaluate_cost(negative, spec), config.mode)
    if config.algorithm is AlgorithmId.LINEAR_SEARCH:
        result = linear_search(spec, negative, config.accuracy, lower, oracle, **options)
    else:
        result = convex_search(
            spec, negative, config.accuracy, lower, oracle, directions=directions, **options
        )
    return result, start


def _negative_search(
    config: ExperimentConfig,
    spec: CostSpec,
    instance: Instance,
    oracle: MembershipOracle,
    rng: np.random.Generator,
) -> tuple[EvasionResult, BoundPair]:
    sampler = config.sampler
    dimension = spec.dimension
    upper = evaluate_cost(instance.negative, spec)
    lower = config.lower_bound
    if lower is None:
        lower = 0.0 if config.mode is BoundMode.ADDITIVE else upper * sampler.inner_radius_fraction
    start = BoundPair(min(lower, upper), upper, config.mode)
    per_phase = sampler.samples(dimension)
    steps = sampler.steps(dimension)
    body = FeasibleBody(oracle, spec, radius=upper)
    try:
        samples = approximate_rounding(
            body,
            instance.negative,
            sampler.rounding_rounds,
            2 * per_phase,
            steps,
            rng,
            centred=sampler.centered_directions,
        )
    except DegenerateBodyError as error:
        log.warning("Rounding failed: %s", error)
        return _unbounded(instance.negative, Termination.DEGENERATE_BODY), start
    try:
        result = set_search(
            body,
            samples,
            start,
            config.accuracy,
            spec,
            instance.negative,
            phases=sampler.phases(dimension),
            per_phase=per_phase,
            steps=steps,
            centred=sampler.centered_directions,
            max_iterations=config.budgets.max_iterations,
            trace=config.trace,
        )
    except UnsoundBoundError as error:
        log.warning("Set search stopped: %s", error)
        return _unbounded(error.witness, Termination.UNSOUND_BOUND), start
    return result, start


def _record(
    config: ExperimentConfig,
    result: EvasionResult | None,
    queries: int,
    wall_ms: float,
    mac: tuple[float, MacSource],
    spec: CostSpec,
) -> TrialRecord:
    if result is None:
        final_cost, termination, iterations, bound_ok = math.nan, Termination.REJECTED, 0, True
    else:
        final_cost = evaluate_cost(result.witness, spec)
        termination, iterations = result.termination, result.iterations
        ceiling = result.query_ceiling
        bound_ok = ceiling is None or result.queries <= ceiling
    mac_reference, mac_source = mac
    ratio = final_cost / mac_reference if 0 < mac_reference < math.inf else math.nan
    return TrialRecord(
        algorithm=config.algorithm,
        dimension=config.dimension,
        exponent=config.exponent,
        epsilon=config.accuracy,
        seed=config.seed,
        queries=queries,
        iterations=iterations,
        final_cost=final_cost,
        mac_reference=mac_reference,
        ratio=ratio,
        bound_ok=bound_ok,
        wall_ms=wall_ms,
        termination=termination,
        mac_source=mac_source,
    )


def run_evade(config: ExperimentConfig) -> TrialOutcome:
    """Run one configured trial end to end, bootstrapping missing bounds.

    Budget exhaustion ends the search with that termination; it is not
    raised. Invalid parameter combinations still raise.
    """
    spec = config.cost_spec()
    instance = build_instance(config, spec, instance_rng(config.seed))
    ledger = QueryLedger(retain=config.record_transcript, cap=config.budgets.transcript_cap)
    oracle = MembershipOracle(
        instance.classifier,
        ledger,
        memoize=config.memoize,
        max_queries=config.budgets.max_queries,
    )
    started = time.perf_counter()
    try:
        if config.algorithm is AlgorithmId.SET_SEARCH:
            rng = search_rng(config.algorithm, config.seed)
            result, start = _negative_search(config, spec, instance, oracle, rng)
        else:
            result, start = _positive_search(config, spec, instance, oracle)
    except QueryBudgetExceeded:
        log.warning("Query budget exhausted while establishing bounds")
        result, start = _unbounded(instance.negative, Termination.BUDGET_EXHAUSTED), None
    wall_ms = (time.perf_counter() - started) * 1e3

    reach = evaluate_cost(instance.negative, spec)
    mac = reference_mac(instance.classifier, spec, reach)
    record = _record(config, result, ledger.count, wall_ms, mac, spec)
    log.info(
        "%s D=%d seed=%d: %s after %d queries, cost %g (MAC %g)",
        config.algorithm,
        config.dimension,
        config.seed,
        record.termination,
        record.queries,
        record.final_cost,
        record.mac_reference,
    )
    transcript = ledger.transcript if config.record_transcript else None
    return TrialOutcome(result, record, start, transcript)


def _rejected(config: ExperimentConfig, error: InvalidInputError) -> TrialOutcome:
    log.warning("Trial %s D=%d rejected: %s", config.algorithm, config.dimension, error)
    record = _record(config, None, 0, 0.0, (math.nan, MacSource.NONE), config.cost_spec())
    return TrialOutcome(None, record)


def _guarded_evade(config: ExperimentConfig) -> TrialOutcome:
    try:
        return run_evade(config)
    except InvalidInputError as error:
        return _rejected(config, error)


def cell_config(
    config: ExperimentConfig,
    algorithm: AlgorithmId,
    dimension: int,
    accuracy: float,
    seed: int,
) -> ExperimentConfig:
    """``config`` moved to one grid cell; vectors sized for another D are dropped."""
    data = config.model_dump()
    if dimension != config.dimension:
        data.update(weights=None, target=None)
        data["classifier"]["normal"] = None
    accuracy_field = "eta" if config.mode is BoundMode.ADDITIVE else "epsilon"
    data.update(
        {
            "algorithm": algorithm,
            "dimension": dimension,
            "seed": seed,
            accuracy_field: accuracy,
        }
    )
    return ExperimentConfig.model_validate(data)


def summarise(outcomes: Iterable[TrialOutcome]) -> list[dict[str, object]]:
    """Per (algorithm, D, epsilon) cell: medians and both query ceilings at |W| = 2D."""
    cells: dict[tuple, list[TrialOutcome]] = {}
    for outcome in outcomes:
        record = outcome.record
        cells.setdefault((record.algorithm, record.dimension, record.epsilon), []).append(
            outcome
        )
    rows = []
    for (algorithm, dimension, epsilon), members in cells.items():
        steps = math.ceil(float(np.median([member.steps for member in members])))
        directions = 2 * dimension
        rows.append(
            {
                "algorithm": algorithm,
                "D": dimension,
                "epsilon": epsilon,
                "trials": len(members),
                "converged": sum(
                    member.record.termination is Termination.CONVERGED for member in members
                ),
                "median_queries": float(np.median([m.record.queries for m in members])),
                "median_steps": steps,
                "kmls_ceiling": kmls_query_ceiling(directions, steps),
                "mls_ceiling": mls_query_ceiling(directions, steps),
                "bound_ok": all(member.record.bound_ok for member in members),
            }
        )
    return rows


def run_bench(config: ExperimentConfig, sweep: BenchSweep) -> BenchReport:
    """Run every cell of ``sweep`` and write the trial and summary CSVs."""
    cells = [
        cell_config(config, algorithm, dimension, accuracy, seed)
        for algorithm in sweep.algorithms
        for dimension in sweep.dimensions
        for accuracy in sweep.epsilons
        for seed in sweep.seeds
    ]
    log.info("Running %d trials on %d workers", len(cells), config.workers)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_guarded_evade, cells))
    else:
        outcomes = [_guarded_evade(cell) for cell in cells]

    rows = summarise(outcomes)
    output = config.output_dir
    trials = write_rows(
        output / f"{sweep.name}.csv", (o.record.row() for o in outcomes), TRIAL_FIELDS
    )
    summary = write_rows(output / f"{sweep.name}-summary.csv", rows, SUMMARY_FIELDS)
    return BenchReport(trials, summary, outcomes, rows)
