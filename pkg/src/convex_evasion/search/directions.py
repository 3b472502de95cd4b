"""Unit-cost search directions radiating from the target."""

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import EmptyDirectionSetError, InvalidInputError
from convex_evasion.geometry.cost import CostSpec, evaluate_costs

log = logging.getLogger(__name__)

UNIT_COST_TOLERANCE = 1e-9


class DirectionSet:
    """An ordered set W of unit-cost directions with pruning flags.

    Pruning is one-way: a direction deactivated during a run is never
    reactivated.
    """

    def __init__(self, vectors: ArrayLike, spec: CostSpec) -> None:
        matrix = np.atleast_2d(np.asarray(vectors, dtype=float))
        if matrix.size == 0:
            raise EmptyDirectionSetError("no search directions")
        if matrix.shape[1] != spec.dimension:
            raise InvalidInputError("directions must match the cost dimension")
        costs = evaluate_costs(spec.target + matrix, spec)
        if not np.all(np.isfinite(costs)) or np.any(costs <= 0):
            raise InvalidInputError("every direction must have finite, positive cost")
        self.vectors = matrix / costs[:, np.newaxis]
        self.active = np.ones(len(self.vectors), dtype=bool)
        self.spec = spec
        drift = np.abs(evaluate_costs(spec.target + self.vectors, spec) - 1.0)
        if np.any(drift > UNIT_COST_TOLERANCE):
            raise InvalidInputError("directions could not be normalised to unit cost")

    @classmethod
    def axis(cls, spec: CostSpec) -> "DirectionSet":
        """``±e_d / s_d`` for every mutable coordinate, ordered +1, -1, +2, -2, ..."""
        scale = spec.coordinate_scale()
        if np.any(scale == 0):
            raise InvalidInputError("zero weights need the surrogate-weight schedule")
        mutable = np.flatnonzero(np.isfinite(scale))
        if mutable.size == 0:
            raise EmptyDirectionSetError("every coordinate is immutable")
        vectors = np.zeros((2 * mutable.size, spec.dimension))
        for row, axis in enumerate(mutable):
            vectors[2 * row, axis] = 1.0 / scale[axis]
            vectors[2 * row + 1, axis] = -1.0 / scale[axis]
        return cls(vectors, spec)

    @classmethod
    def linear(cls, spec: CostSpec, negative: ArrayLike) -> "DirectionSet":
        """Axis directions toward the orthant of ``negative``, both ways where level."""
        full = cls.axis(spec)
        signs = np.sign(np.asarray(negative, dtype=float) - spec.target)
        keep = [
            row
            for row, vector in enumerate(full.vectors)
            if signs[np.flatnonzero(vector)[0]] in (0.0, np.sign(vector.sum()))
        ]
        return cls(full.vectors[keep], spec)

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self) -> Iterator[NDArray[np.float64]]:
        return iter(self.vectors)

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    def active_indices(self) -> list[int]:
        return [int(index) for index in np.flatnonzero(self.active)]

    def prune(self, indices: list[int]) -> None:
        self.active[indices] = False

    def probe(self, index: int, cost: float) -> NDArray[np.float64]:
        """The point ``target + cost * w_index``."""
        return self.spec.target + cost * self.vectors[index]

    def copy(self) -> "DirectionSet":
        clone = object.__new__(DirectionSet)
        clone.vectors = self.vectors
        clone.active = self.active.copy()
        clone.spec = self.spec
        return clone

    def subset(self, indices: list[int]) -> "DirectionSet":
        """A fresh, fully active set holding only ``indices``."""
        if not indices:
            raise EmptyDirectionSetError("no search directions")
        return DirectionSet(self.vectors[indices], self.spec)


@dataclass(frozen=True)
class WeightPlan:
    """How to search under degenerate weights.

    ``surrogates`` is ``(spec,)`` for regular weights; with zero weights it
    is the schedule of specs whose zeros become ``2^-t``, and the result
    can no longer be certified near-optimal.
    """

    surrogates: tuple[CostSpec, ...]
    certified: bool
    directions: DirectionSet | None = None

    def directions_for(self, spec: CostSpec) -> DirectionSet:
        if self.directions is not None:
            return self.directions
        return DirectionSet.axis(spec)


def handle_degenerate_weights(
    spec: CostSpec, directions: DirectionSet | None = None, rounds: int = 8
) -> WeightPlan:
    """Drop immutable coordinates from W and schedule surrogates for free ones."""
    immutable = np.isinf(spec.weights)
    if np.all(immutable):
        raise EmptyDirectionSetError("every coordinate is immutable")
    free = spec.weights == 0
    if not np.any(free):
        if directions is None:
            kept = DirectionSet.axis(spec)
        else:
            movable = ~np.any(directions.vectors[:, immutable] != 0, axis=1)
            kept = directions.subset([int(i) for i in np.flatnonzero(movable)])
        return WeightPlan(surrogates=(spec,), certified=True, directions=kept)
    if rounds < 1:
        raise InvalidInputError("the surrogate schedule needs at least one round")
    surrogates = tuple(
        spec.with_weights(np.where(free, math.ldexp(1.0, -t), spec.weights))
        for t in range(1, rounds + 1)
    )
    log.debug("Scheduling %d surrogate weightings", rounds)
    return WeightPlan(surrogates=surrogates, certified=False)
