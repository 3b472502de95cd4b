"""Randomized cutting-plane search for classifiers whose negative set is convex."""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from convex_evasion.core.errors import (
    DegenerateBodyError,
    InvalidInputError,
    QueryBudgetExceeded,
    UnsoundBoundError,
)
from convex_evasion.geometry.cost import (
    BoundPair,
    CostSpec,
    Point,
    cost_tolerance,
    evaluate_cost,
    evaluate_costs,
    subgradient_halfspace,
)
from convex_evasion.search.positive import EvasionResult, Termination
from convex_evasion.search.sampling import FeasibleBody, SampleSet, draw

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseRecord:
    cost: float
    phase: int
    samples: int
    cuts: int
    best_cost: float
    queries: int


@dataclass
class IntersectOutcome:
    found: bool
    witness: Point | None
    body: FeasibleBody
    samples: SampleSet
    phases: list[PhaseRecord]


def intersect_search(
    body: FeasibleBody,
    samples: SampleSet,
    cost: float,
    spec: CostSpec,
    phases: int,
    per_phase: int,
    steps: int,
    *,
    centred: bool = True,
) -> IntersectOutcome:
    """Decide whether the body meets the cost ball of radius ``cost``.

    Each phase draws ``2 * per_phase`` samples; one at cost at most
    ``cost`` is a witness. Otherwise the body is cut through the centroid
    z of the first half by the cost's subgradient halfspace at z, which
    keeps every point cheaper than z, and the second half's survivors seed
    the next phase. The centroid itself is a witness when it is cheap
    enough and still negative.
    """
    if phases < 1 or per_phase < 1:
        raise InvalidInputError("phases and samples per phase must be positive")
    records: list[PhaseRecord] = []
    start = body.oracle.ledger.count
    limit = cost + cost_tolerance(cost)
    held = evaluate_costs(samples.points, spec)
    if np.any(held <= limit):
        cheapest = samples.points[int(np.argmin(held))]
        return IntersectOutcome(True, cheapest, body, samples, records)
    for phase in range(1, phases + 1):
        drawn = draw(body, samples, 2 * per_phase, steps, centred=centred)
        costs = evaluate_costs(drawn.points, spec)
        best = int(np.argmin(costs))
        records.append(
            PhaseRecord(
                cost,
                phase,
                len(samples),
                len(body.cuts),
                float(costs[best]),
                body.oracle.ledger.count - start,
            )
        )
        if costs[best] <= limit:
            return IntersectOutcome(True, drawn.points[best], body, drawn, records)

        first, second = drawn.halves()
        centroid = first.mean()
        if evaluate_cost(centroid, spec) <= limit and body.contains(centroid):
            return IntersectOutcome(True, centroid, body, drawn, records)

        cut = subgradient_halfspace(centroid, spec)
        body = body.with_cut(cut, evaluate_cost(centroid, spec))
        survivors = second.retain(cut)
        if len(survivors) == 0:
            survivors = first.retain(cut)
        if len(survivors) == 0:
            raise DegenerateBodyError("no samples survived the cut")
        samples = survivors
        log.debug(
            "Phase %d at cost %g: best sample %g, %d survivors",
            phase,
            cost,
            costs[best],
            len(samples),
        )
    return IntersectOutcome(False, None, body, samples, records)


def set_search(
    body: FeasibleBody,
    samples: SampleSet,
    bounds: BoundPair,
    accuracy: float,
    spec: CostSpec,
    negative: ArrayLike,
    *,
    phases: int,
    per_phase: int,
    steps: int,
    centred: bool = True,
    max_iterations: int = 100_000,
    trace: bool = False,
) -> EvasionResult:
    """Binary search on the cost, answering each proposal by intersect_search.

    A found intersection lowers the upper bound to the witness cost. The
    shrunken body and its samples carry over to the next proposal, which
    uses only the cuts whose level is at least the proposal: those never
    remove a point cheaper than it. An empty intersection raises the
    lower bound. Misses are probabilistic: a witness cheaper than a missed
    proposal refutes that miss, and the lower bound falls back to the
    highest miss still standing.

    Raises:
        UnsoundBoundError: a witness costs less than the starting lower
            bound, which the caller certified.
    """
    if not accuracy > 0:
        raise InvalidInputError("accuracy must be positive")
    if spec.exponent < 1:
        raise InvalidInputError("set_search requires p >= 1")
    witness = np.asarray(negative, dtype=float)
    start = body.oracle.ledger.count
    records: list[PhaseRecord] = []
    floor = bounds.lower
    misses: list[float] = []
    iterations = 0
    termination = Termination.CONVERGED
    try:
        while not bounds.within(accuracy):
            if iterations >= max_iterations:
                termination = Termination.BUDGET_EXHAUSTED
                break
            proposal = bounds.proposal()
            outcome = intersect_search(
                body.valid_at(proposal),
                samples,
                proposal,
                spec,
                phases,
                per_phase,
                steps,
                centred=centred,
            )
            records.extend(outcome.phases)
            iterations += 1
            body, samples = outcome.body, outcome.samples
            if outcome.found:
                witness = outcome.witness
                cost = evaluate_cost(witness, spec)
                if cost < floor - cost_tolerance(floor):
                    raise UnsoundBoundError(
                        f"witness of cost {cost:g} is below the lower bound {floor:g}",
                        witness,
                    )
                refuted = [miss for miss in misses if miss > cost]
                if refuted:
                    log.warning(
                        "Witness of cost %g refutes missed proposals %s", cost, refuted
                    )
                    misses = [miss for miss in misses if miss <= cost]
                lower = max([floor, *misses])
                bounds = BoundPair(lower, max(cost, lower), bounds.mode)
            else:
                misses.append(proposal)
                bounds = bounds.with_lower(proposal)
            log.info(
                "Proposal %g %s: bounds [%g, %g]",
                proposal,
                "met" if outcome.found else "missed",
                bounds.lower,
                bounds.upper,
            )
    except QueryBudgetExceeded:
        termination = Termination.BUDGET_EXHAUSTED
    except DegenerateBodyError as error:
        log.warning("Set search stopped: %s", error)
        termination = Termination.DEGENERATE_BODY
    return EvasionResult(
        witness=witness,
        bounds=bounds,
        queries=body.oracle.ledger.count - start,
        iterations=iterations,
        termination=termination,
        bisections=iterations,
        trace=records if trace else [],
    )
