"""Multiline searches for classifiers whose positive set is convex.

Every search keeps a pair of bounds on the MAC: the cost ball of radius
``lower`` is certified positive by convexity, and ``upper`` is the cost of
the best negative witness so far. Probes are spent along unit-cost rays
from the target and each ray is abandoned once it can no longer improve
either bound.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike

from convex_evasion.core.errors import (
    InconsistentOracleError,
    InvalidInputError,
    ParameterRangeError,
    QueryBudgetExceeded,
    SearchExhaustedError,
)
from convex_evasion.geometry.bounds import (
    default_kmls_steps,
    enclosed_lp_radius,
    kmls_query_ceiling,
    mls_query_ceiling,
    multiline_epsilon_threshold,
)
from convex_evasion.geometry.cost import (
    BoundMode,
    BoundPair,
    CostSpec,
    Point,
    evaluate_cost,
)
from convex_evasion.oracles.membership import NEGATIVE, POSITIVE, Oracle
from convex_evasion.search.directions import DirectionSet, handle_degenerate_weights

log = logging.getLogger(__name__)


class Termination(StrEnum):
    CONVERGED = "converged"
    NO_LOWER_BOUND = "no-lower-bound"
    NO_NEGATIVE = "no-negative"
    BUDGET_EXHAUSTED = "budget-exhausted"
    DEGENERATE_BODY = "degenerate-body"
    UNSOUND_BOUND = "unsound-bound"
    REJECTED = "rejected"


class SearchEngine(StrEnum):
    MLS = "mls"
    KMLS = "kmls"


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    lower: float
    upper: float
    queries: int
    active: int


@dataclass
class EvasionResult:
    """Outcome of a search.

    On ``converged`` the witness is oracle-negative, costs at most
    ``bounds.upper`` and the bounds meet the requested accuracy.
    ``certified`` is False when the bounds refer to a surrogate cost.
    ``query_ceiling`` is the worst-case query count of the engine that ran,
    given the gap and direction count it started from.
    """

    witness: Point
    bounds: BoundPair | None
    queries: int
    iterations: int
    termination: Termination
    bisections: int = 0
    certified: bool = True
    directions: DirectionSet | None = None
    query_ceiling: float | None = None
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED


class _Progress:
    """Query accounting and optional tracing for one search run."""

    def __init__(self, oracle: Oracle, trace: bool) -> None:
        self.oracle = oracle
        self.start = oracle.ledger.count
        self.records: list[TraceRecord] | None = [] if trace else None

    @property
    def queries(self) -> int:
        return self.oracle.ledger.count - self.start

    def note(self, iteration: int, bounds: BoundPair, active: int) -> None:
        log.debug(
            "Iteration %d: bounds [%g, %g], %d queries, %d active directions",
            iteration,
            bounds.lower,
            bounds.upper,
            self.queries,
            active,
        )
        if self.records is not None:
            self.records.append(
                TraceRecord(iteration, bounds.lower, bounds.upper, self.queries, active)
            )

    def trace(self) -> list:
        return self.records or []


def _check_accuracy(accuracy: float) -> None:
    if not accuracy > 0:
        raise InvalidInputError("accuracy (epsilon or eta) must be positive")


def _lazy_sweep(
    directions: DirectionSet, indices: list[int], cost: float, oracle: Oracle
) -> int | None:
    """Probe ``indices`` at ``cost`` until the first negative.

    Directions found positive before it are pruned: every later proposal
    is cheaper than ``cost`` and convexity keeps them positive there.
    """
    positives = []
    for index in indices:
        if oracle.query(directions.probe(index, cost)) == NEGATIVE:
            directions.prune(positives)
            return index
        positives.append(index)
    return None


def _confirm_negative(witness: Point, oracle: Oracle) -> None:
    if oracle.query(witness) != NEGATIVE:
        raise InconsistentOracleError("the supplied negative example is labelled +1")


def multiline_search(
    directions: DirectionSet,
    negative: ArrayLike,
    bounds: BoundPair,
    accuracy: float,
    oracle: Oracle,
    *,
    max_iterations: int = 100_000,
    verify_negative: bool = False,
    trace: bool = False,
) -> EvasionResult:
    """Simultaneous binary search along every active direction."""
    _check_accuracy(accuracy)
    spec = directions.spec
    active = directions.copy()
    witness = np.asarray(negative, dtype=float)
    progress = _Progress(oracle, trace)
    iterations = 0
    ceiling = mls_query_ceiling(active.active_count, bounds.steps(accuracy))
    termination = Termination.CONVERGED
    try:
        if verify_negative:
            _confirm_negative(witness, oracle)
        while not bounds.within(accuracy):
            if iterations >= max_iterations:
                termination = Termination.BUDGET_EXHAUSTED
                break
            cost = bounds.proposal()
            found = _lazy_sweep(active, active.active_indices(), cost, oracle)
            if found is None:
                bounds = bounds.with_lower(cost)
            else:
                witness = active.probe(found, cost)
                upper = max(bounds.lower, evaluate_cost(witness, spec))
                bounds = bounds.with_upper(upper)
            iterations += 1
            progress.note(iterations, bounds, active.active_count)
    except QueryBudgetExceeded:
        termination = Termination.BUDGET_EXHAUSTED
    return EvasionResult(
        witness=witness,
        bounds=bounds,
        queries=progress.queries,
        iterations=iterations,
        termination=termination,
        bisections=iterations,
        directions=active,
        query_ceiling=ceiling,
        trace=progress.trace(),
    )


def _next_direction(directions: DirectionSet, previous: int | None) -> int:
    """Lowest active index other than ``previous``; ``previous`` if it is alone."""
    candidates = directions.active_indices()
    for index in candidates:
        if index != previous:
            return index
    return candidates[0]


def kmls(
    directions: DirectionSet,
    negative: ArrayLike,
    bounds: BoundPair,
    accuracy: float,
    oracle: Oracle,
    steps: int | None = None,
    *,
    max_iterations: int = 100_000,
    verify_negative: bool = False,
    trace: bool = False,
) -> EvasionResult:
    """K-step multiline search: K bisections on one ray, then one sweep.

    The sweep over the remaining directions at the candidate lower bound
    either confirms it or finds a negative that prunes every direction
    seen positive.
    """
    _check_accuracy(accuracy)
    if steps is None:
        steps = default_kmls_steps(bounds.steps(accuracy))
    if steps < 1:
        raise InvalidInputError("kmls needs at least one bisection step")
    spec = directions.spec
    active = directions.copy()
    witness = np.asarray(negative, dtype=float)
    progress = _Progress(oracle, trace)
    iterations = bisections = 0
    ceiling = kmls_query_ceiling(active.active_count, bounds.steps(accuracy))
    previous = None
    termination = Termination.CONVERGED
    try:
        if verify_negative:
            _confirm_negative(witness, oracle)
        while not bounds.within(accuracy):
            if iterations >= max_iterations:
                termination = Termination.BUDGET_EXHAUSTED
                break
            chosen = previous = _next_direction(active, previous)
            candidate = bounds
            for _ in range(steps):
                if candidate.within(accuracy):
                    break
                cost = candidate.proposal()
                point = active.probe(chosen, cost)
                bisections += 1
                if oracle.query(point) == POSITIVE:
                    candidate = candidate.with_lower(cost)
                else:
                    witness = point
                    upper = max(candidate.lower, evaluate_cost(point, spec))
                    candidate = candidate.with_upper(upper)

            if candidate.lower == bounds.lower:
                # Every step was negative; the old lower bound is already certified.
                bounds = candidate
            else:
                others = [index for index in active.active_indices() if index != chosen]
                found = _lazy_sweep(active, others, candidate.lower, oracle)
                if found is None:
                    bounds = candidate
                else:
                    witness = active.probe(found, candidate.lower)
                    active.prune([chosen])
                    upper = max(bounds.lower, evaluate_cost(witness, spec))
                    bounds = bounds.with_upper(upper)
            iterations += 1
            progress.note(iterations, bounds, active.active_count)
    except QueryBudgetExceeded:
        termination = Termination.BUDGET_EXHAUSTED
    return EvasionResult(
        witness=witness,
        bounds=bounds,
        queries=progress.queries,
        iterations=iterations,
        termination=termination,
        bisections=bisections,
        directions=active,
        query_ceiling=ceiling,
        trace=progress.trace(),
    )


def _run_engine(
    engine: SearchEngine,
    directions: DirectionSet,
    negative: ArrayLike,
    bounds: BoundPair,
    accuracy: float,
    oracle: Oracle,
    kmls_steps: int | None,
    **options,
) -> EvasionResult:
    if engine is SearchEngine.KMLS:
        return kmls(directions, negative, bounds, accuracy, oracle, kmls_steps, **options)
    return multiline_search(directions, negative, bounds, accuracy, oracle, **options)


def _immediate(
    witness: Point, bounds: BoundPair, directions: DirectionSet | None
) -> EvasionResult:
    return EvasionResult(
        witness=witness,
        bounds=bounds,
        queries=0,
        iterations=0,
        termination=Termination.CONVERGED,
        directions=directions,
        query_ceiling=0.0,
    )


def convex_search(
    spec: CostSpec,
    negative: ArrayLike,
    accuracy: float,
    lower: float,
    oracle: Oracle,
    *,
    mode: BoundMode = BoundMode.MULTIPLICATIVE,
    engine: SearchEngine = SearchEngine.MLS,
    kmls_steps: int | None = None,
    directions: DirectionSet | None = None,
    surrogate_rounds: int = 8,
    **options,
) -> EvasionResult:
    """ε-IMAC search over the axis directions of the cost ball.

    For p = 1 the axis directions are the vertices of the unit cost ball.
    For p > 1 they span only the enclosed L1 ball, so the search runs at
    the tighter accuracy ``(1 + ε)·r - 1`` and certifies ``r·C+``; this is
    only possible above the multiline ε threshold. For p < 1 the L1 ball
    contains the Lp ball and no correction is needed.
    """
    _check_accuracy(accuracy)
    witness = np.asarray(negative, dtype=float)
    bounds = BoundPair(lower, evaluate_cost(witness, spec), mode)
    if np.any(spec.weights == 0):
        return zero_weight_search(
            spec,
            witness,
            accuracy,
            lower,
            oracle,
            mode=mode,
            engine=engine,
            kmls_steps=kmls_steps,
            rounds=surrogate_rounds,
            **options,
        )
    if bounds.within(accuracy):
        return _immediate(witness, bounds, directions)

    if directions is None:
        directions = handle_degenerate_weights(spec).directions_for(spec)
    if spec.exponent <= 1:
        return _run_engine(
            engine, directions, witness, bounds, accuracy, oracle, kmls_steps, **options
        )

    if mode is BoundMode.ADDITIVE:
        raise ParameterRangeError("additive accuracy is only supported for p <= 1")
    mutable = int(np.isfinite(spec.weights).sum())
    threshold = multiline_epsilon_threshold(mutable, spec.exponent)
    if accuracy <= threshold:
        raise ParameterRangeError(
            f"multiline search under an L{spec.exponent:g} cost in {mutable} dimensions "
            f"needs epsilon > {threshold:.6g}; below it the query cost grows "
            "exponentially with the dimension"
        )
    radius = enclosed_lp_radius(mutable, spec.exponent)
    inner_accuracy = (1.0 + accuracy) * radius - 1.0
    log.debug("Enclosed radius %g, inner epsilon %g", radius, inner_accuracy)
    result = _run_engine(
        engine, directions, witness, bounds, inner_accuracy, oracle, kmls_steps, **options
    )
    certified_lower = min(max(lower, radius * result.bounds.lower), result.bounds.upper)
    result.bounds = BoundPair(certified_lower, result.bounds.upper, mode)
    return result


def linear_search(
    spec: CostSpec,
    negative: ArrayLike,
    accuracy: float,
    lower: float,
    oracle: Oracle,
    *,
    mode: BoundMode = BoundMode.MULTIPLICATIVE,
    engine: SearchEngine = SearchEngine.MLS,
    kmls_steps: int | None = None,
    **options,
) -> EvasionResult:
    """Multiline search restricted to the orthant of the negative example.

    Valid for halfspace classifiers whose cheapest negative axis point lies
    in an orthant containing ``negative``.
    """
    if spec.exponent != 1.0:
        raise InvalidInputError("linear_search is defined for p = 1")
    _check_accuracy(accuracy)
    witness = np.asarray(negative, dtype=float)
    bounds = BoundPair(lower, evaluate_cost(witness, spec), mode)
    directions = DirectionSet.linear(spec, witness)
    if bounds.within(accuracy):
        return _immediate(witness, bounds, directions)
    return _run_engine(
        engine, directions, witness, bounds, accuracy, oracle, kmls_steps, **options
    )


def zero_weight_search(
    spec: CostSpec,
    negative: ArrayLike,
    accuracy: float,
    lower: float,
    oracle: Oracle,
    *,
    rounds: int = 8,
    **search_options,
) -> EvasionResult:
    """Rerun convex_search with free coordinates priced at ``2^-t``.

    Each run starts from the cheapest witness so far. The result is never
    certified: a free coordinate may hide an arbitrarily cheap negative.
    """
    plan = handle_degenerate_weights(spec, rounds=rounds)
    witness = np.asarray(negative, dtype=float)
    best_cost = evaluate_cost(witness, spec)
    queries = iterations = bisections = 0
    ceiling: float | None = 0.0
    trace: list = []
    for surrogate in plan.surrogates:
        result = convex_search(surrogate, witness, accuracy, lower, oracle, **search_options)
        queries += result.queries
        iterations += result.iterations
        bisections += result.bisections
        if ceiling is not None and result.query_ceiling is not None:
            ceiling += result.query_ceiling
        else:
            ceiling = None
        trace.extend(result.trace)
        if evaluate_cost(result.witness, spec) <= best_cost:
            witness = result.witness
            best_cost = evaluate_cost(witness, spec)
        if result.termination is Termination.BUDGET_EXHAUSTED:
            break
    log.info("Surrogate schedule finished with witness cost %g", best_cost)
    # The lower bound was certified for the last surrogate, not for spec.
    surrogate_lower = min(result.bounds.lower, best_cost)
    return EvasionResult(
        witness=witness,
        bounds=BoundPair(surrogate_lower, best_cost, result.bounds.mode),
        queries=queries,
        iterations=iterations,
        termination=result.termination,
        bisections=bisections,
        certified=plan.certified,
        directions=result.directions,
        query_ceiling=ceiling,
        trace=trace,
    )


@dataclass
class SpiralOutcome:
    directions: DirectionSet
    lower: float | None
    upper: float
    witness: Point
    queries: int
    termination: Termination


def spiral_search(
    directions: DirectionSet,
    negative: ArrayLike,
    upper: float,
    oracle: Oracle,
    *,
    max_doublings: int = 64,
) -> SpiralOutcome:
    """Halve the cost exponent until every surviving direction is positive.

    A direction probed positive joins V; a negative probe discards V
    (pruning those directions), tightens the witness and halves the
    exponent again. The survivors V become the search set downstream.
    """
    if not upper > 0:
        raise InvalidInputError("spiral search needs a positive upper bound")
    active = directions.copy()
    pending = deque(active.active_indices())
    accepted: list[int] = []
    witness = np.asarray(negative, dtype=float)
    best_upper = upper
    start = oracle.ledger.count
    level = 0
    termination = Termination.CONVERGED
    try:
        while pending:
            cost = math.ldexp(upper, -(2**level))
            if cost == 0.0:
                termination = Termination.NO_LOWER_BOUND
                break
            index = pending.popleft()
            point = active.probe(index, cost)
            if oracle.query(point) == POSITIVE:
                accepted.append(index)
                continue
            witness = point
            best_upper = min(best_upper, evaluate_cost(point, active.spec))
            active.prune(accepted)
            accepted = []
            pending.appendleft(index)
            level += 1
            log.debug("Spiral search deepened to level %d at cost %g", level, cost)
            if level >= max_doublings:
                termination = Termination.NO_LOWER_BOUND
                break
    except QueryBudgetExceeded:
        termination = Termination.BUDGET_EXHAUSTED

    lower = None
    if termination is Termination.CONVERGED:
        lower = math.ldexp(upper, -(2**level))
        active.prune([index for index in active.active_indices() if index not in accepted])
    else:
        log.warning("Spiral search found no lower bound after %d levels", level)
    return SpiralOutcome(
        directions=active,
        lower=lower,
        upper=best_upper,
        witness=witness,
        queries=oracle.ledger.count - start,
        termination=termination,
    )


@dataclass
class UpperBootstrap:
    witness: Point
    bounds: BoundPair
    directions: DirectionSet
    queries: int
    levels: int


def bootstrap_upper_bound(
    directions: DirectionSet,
    lower: float,
    oracle: Oracle,
    *,
    mode: BoundMode = BoundMode.MULTIPLICATIVE,
    max_doublings: int = 64,
) -> UpperBootstrap:
    """Probe every direction at ``lower·2^(2^t)`` until one turns negative.

    The last fully positive level becomes the certified lower bound, so
    the starting gap satisfies ``log2 G = 2^(T-1)``.
    """
    if not lower > 0:
        raise InvalidInputError("bootstrapping a negative example needs lower > 0")
    active = directions.copy()
    start = oracle.ledger.count
    for level in range(max_doublings):
        try:
            cost = math.ldexp(lower, 2**level)
        except OverflowError:
            break
        reach = cost * np.abs(active.vectors[active.active]).max()
        if not np.isfinite(reach + np.abs(active.spec.target).max()):
            break
        found = _lazy_sweep(active, active.active_indices(), cost, oracle)
        if found is None:
            continue
        witness = active.probe(found, cost)
        certified = lower if level == 0 else math.ldexp(lower, 2 ** (level - 1))
        bounds = BoundPair(certified, evaluate_cost(witness, active.spec), mode)
        log.debug("Negative example found at level %d, cost %g", level, cost)
        return UpperBootstrap(witness, bounds, active, oracle.ledger.count - start, level)
    raise SearchExhaustedError(
        f"no negative example within {max_doublings} doublings of the cost"
    )


@dataclass
class Bootstrap:
    """Starting point of a search once missing bounds have been established."""

    directions: DirectionSet
    witness: Point | None
    bounds: BoundPair | None
    queries: int
    termination: Termination = Termination.CONVERGED


def establish_bounds(
    directions: DirectionSet,
    oracle: Oracle,
    *,
    negative: ArrayLike | None = None,
    lower: float | None = None,
    mode: BoundMode = BoundMode.MULTIPLICATIVE,
    max_doublings: int = 64,
) -> Bootstrap:
    """Find whichever of the negative example and the lower bound is missing.

    With neither, a sweep at unit cost decides: a negative there supplies
    the example, an all-positive sweep certifies ``lower = 1``. Additive
    mode never needs a lower bound, since the target itself has cost 0.
    """
    start = oracle.ledger.count
    spec = directions.spec
    witness = None if negative is None else np.asarray(negative, dtype=float)
    if witness is None and not lower:
        active = directions.copy()
        found = _lazy_sweep(active, active.active_indices(), 1.0, oracle)
        if found is None:
            lower = 1.0
        else:
            witness = active.probe(found, 1.0)
        directions = active
    if lower is None and mode is BoundMode.ADDITIVE:
        lower = 0.0

    if lower is None:
        upper = evaluate_cost(witness, spec)
        spiral = spiral_search(
            directions, witness, upper, oracle, max_doublings=max_doublings
        )
        if spiral.lower is None:
            queries = oracle.ledger.count - start
            return Bootstrap(
                spiral.directions, spiral.witness, None, queries, spiral.termination
            )
        directions, witness = spiral.directions, spiral.witness
        bounds = BoundPair(spiral.lower, spiral.upper, mode)
    elif witness is None:
        try:
            found = bootstrap_upper_bound(
                directions, lower, oracle, mode=mode, max_doublings=max_doublings
            )
        except SearchExhaustedError:
            log.warning("No negative example found above lower bound %g", lower)
            queries = oracle.ledger.count - start
            return Bootstrap(directions, None, None, queries, Termination.NO_NEGATIVE)
        directions, witness, bounds = found.directions, found.witness, found.bounds
    else:
        bounds = BoundPair(lower, evaluate_cost(witness, spec), mode)
    return Bootstrap(directions, witness, bounds, oracle.ledger.count - start)
