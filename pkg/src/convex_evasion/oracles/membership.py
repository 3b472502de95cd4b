"""The membership-query contract and its accounting."""

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import InvalidInputError, QueryBudgetExceeded
from convex_evasion.geometry.cost import (
    BoundMode,
    BoundPair,
    CostSpec,
    cost_tolerance,
    evaluate_cost,
)

log = logging.getLogger(__name__)

POSITIVE = 1
NEGATIVE = -1


class Classifier(Protocol):
    def predict(self, x: np.ndarray) -> int: ...


class Oracle(Protocol):
    """Anything the searches may query."""

    ledger: "QueryLedger"

    def query(self, x: ArrayLike) -> int: ...


@dataclass
class QueryLedger:
    """Counts raw oracle invocations and optionally keeps a transcript."""

    retain: bool = False
    cap: int = 1_000_000
    count: int = 0
    transcript: list[tuple[np.ndarray, int]] = field(default_factory=list)
    truncated: bool = False

    def record(self, x: np.ndarray, label: int) -> None:
        self.count += 1
        if not self.retain:
            return
        if len(self.transcript) >= self.cap:
            self.truncated = True
            return
        self.transcript.append((x.copy(), label))

    def record_many(self, points: np.ndarray, labels: np.ndarray) -> None:
        self.count += len(labels)
        if not self.retain:
            return
        room = max(self.cap - len(self.transcript), 0)
        if room < len(labels):
            self.truncated = True
        self.transcript.extend(
            (point.copy(), int(label)) for point, label in zip(points[:room], labels[:room])
        )

    def labels(self) -> list[int]:
        return [label for _, label in self.transcript]


def _as_query(x: ArrayLike) -> np.ndarray:
    point = np.asarray(x, dtype=float)
    if point.ndim != 1 or not np.all(np.isfinite(point)):
        raise InvalidInputError("query points must be finite vectors")
    return point


class MembershipOracle:
    """Answers membership queries for a classifier, counting every call.

    With ``memoize`` set, repeated points are answered from a cache and
    only first sightings reach the classifier and the ledger.
    """

    def __init__(
        self,
        classifier: Classifier,
        ledger: QueryLedger | None = None,
        memoize: bool = False,
        max_queries: int | None = None,
    ) -> None:
        self.classifier = classifier
        self.ledger = ledger or QueryLedger()
        self.max_queries = max_queries
        self._cache: dict[bytes, int] | None = {} if memoize else None
        self.cache_hits = 0

    def query(self, x: ArrayLike) -> int:
        point = _as_query(x)
        if self._cache is not None:
            key = point.tobytes()
            if key in self._cache:
                self.cache_hits += 1
                return self._cache[key]
        if self.max_queries is not None and self.ledger.count >= self.max_queries:
            log.warning("Query budget of %d exhausted", self.max_queries)
            raise QueryBudgetExceeded(f"query budget of {self.max_queries} exhausted")
        label = POSITIVE if self.classifier.predict(point) == POSITIVE else NEGATIVE
        self.ledger.record(point, label)
        if self._cache is not None:
            self._cache[key] = label
        return label

    def query_many(self, points: ArrayLike) -> NDArray[np.int64]:
        """Labels for the rows of ``points``, one counted query per row.

        Batches go to the classifier in one call when it can label many
        points and neither the cache nor the budget needs per-point order.
        """
        batch = np.atleast_2d(np.asarray(points, dtype=float))
        predict_many = getattr(self.classifier, "predict_many", None)
        fits_budget = (
            self.max_queries is None or self.ledger.count + len(batch) <= self.max_queries
        )
        if predict_many is None or self._cache is not None or not fits_budget:
            return np.array([self.query(point) for point in batch], dtype=np.int64)
        if not np.all(np.isfinite(batch)):
            raise InvalidInputError("query points must be finite vectors")
        labels = np.where(predict_many(batch) == POSITIVE, POSITIVE, NEGATIVE)
        self.ledger.record_many(batch, labels)
        return labels


class MaliciousOracle:
    """The adversary that halves the bound gap on every query.

    It answers +1 exactly when the query costs no more than the current
    proposal (geometric mean, or arithmetic mean in additive mode) and
    then moves one of its bounds to the queried cost. Its answers stay
    consistent with the open cost ball at its final upper bound.
    """

    def __init__(
        self, spec: CostSpec, bounds: BoundPair, ledger: QueryLedger | None = None
    ) -> None:
        if not bounds.lower < bounds.upper:
            raise InvalidInputError("the malicious oracle needs lower < upper")
        self.spec = spec
        self.bounds = bounds
        self.ledger = ledger or QueryLedger()

    @classmethod
    def from_costs(
        cls,
        spec: CostSpec,
        lower: float,
        upper: float,
        mode: BoundMode = BoundMode.MULTIPLICATIVE,
        retain: bool = False,
    ) -> "MaliciousOracle":
        return cls(spec, BoundPair(lower, upper, mode), QueryLedger(retain=retain))

    def respond(self, x: ArrayLike) -> int:
        cost = evaluate_cost(x, self.spec)
        threshold = self.bounds.proposal()
        if cost <= threshold + cost_tolerance(threshold):
            if cost > self.bounds.lower:
                self.bounds = self.bounds.with_lower(min(cost, self.bounds.upper))
            return POSITIVE
        if cost < self.bounds.upper:
            self.bounds = self.bounds.with_upper(cost)
        return NEGATIVE

    def query(self, x: ArrayLike) -> int:
        point = _as_query(x)
        label = self.respond(point)
        self.ledger.record(point, label)
        return label


def malicious_respond(oracle: MaliciousOracle, x: ArrayLike) -> int:
    return oracle.respond(x)


def query(oracle: Oracle, x: ArrayLike) -> int:
    return oracle.query(x)


def query_many(oracle: Oracle, points: ArrayLike) -> NDArray[np.int64]:
    """Batch queries, falling back to one call per row for stateful oracles."""
    batched = getattr(oracle, "query_many", None)
    if batched is not None:
        return batched(points)
    return np.array([oracle.query(point) for point in np.atleast_2d(points)], dtype=np.int64)
