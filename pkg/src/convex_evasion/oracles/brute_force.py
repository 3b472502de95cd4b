"""Grid search for the MAC of low-dimensional classifiers."""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import InvalidInputError, SearchExhaustedError
from convex_evasion.geometry.cost import CostSpec, evaluate_costs
from convex_evasion.oracles.classifiers import SyntheticClassifier
from convex_evasion.oracles.membership import NEGATIVE

log = logging.getLogger(__name__)

MAX_DIMENSION = 3
MAX_GRID_POINTS = 200_000_000


@dataclass(frozen=True)
class MacInterval:
    lo: float
    hi: float
    witness: NDArray[np.float64]

    def __contains__(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _axes(lower: NDArray, upper: NDArray, resolution: float) -> list[NDArray]:
    return [
        np.arange(low, high + resolution / 2, resolution)
        for low, high in zip(lower, upper, strict=True)
    ]


def brute_force_mac(
    classifier: SyntheticClassifier,
    spec: CostSpec,
    resolution: float,
    box: tuple[ArrayLike, ArrayLike],
) -> MacInterval:
    """Bracket the MAC by labelling every grid point of ``box``.

    ``hi`` is the cheapest negative grid point. The negative set is assumed
    to contain a full grid cell next to its cheapest point, so by the
    triangle inequality the MAC is at least ``hi`` minus the cost of one
    cell diagonal.
    """
    if spec.dimension > MAX_DIMENSION:
        raise InvalidInputError(f"brute force is limited to D <= {MAX_DIMENSION}")
    if spec.exponent < 1:
        raise InvalidInputError("brute force requires p >= 1")
    if not resolution > 0:
        raise InvalidInputError("resolution must be positive")
    lower = np.asarray(box[0], dtype=float)
    upper = np.asarray(box[1], dtype=float)
    if lower.shape != (spec.dimension,) or upper.shape != (spec.dimension,):
        raise InvalidInputError("box corners must match the cost dimension")
    if np.any(upper < lower):
        raise InvalidInputError("box upper corner must dominate the lower corner")

    axes = _axes(lower, upper, resolution)
    total = int(np.prod([axis.size for axis in axes]))
    if total > MAX_GRID_POINTS:
        raise InvalidInputError(f"grid of {total} points is too fine for brute force")
    if len(axes) > 1:
        mesh = np.meshgrid(*axes[1:], indexing="ij")
        rest = np.stack(mesh, axis=-1).reshape(-1, len(axes) - 1)
    else:
        rest = np.empty((1, 0))

    best_cost = np.inf
    witness = None
    for value in axes[0]:
        points = np.column_stack([np.full(rest.shape[0], value), rest])
        negative = classifier.predict_many(points) == NEGATIVE
        if not np.any(negative):
            continue
        costs = evaluate_costs(points[negative], spec)
        index = int(np.argmin(costs))
        if costs[index] < best_cost:
            best_cost = float(costs[index])
            witness = points[negative][index]

    if witness is None:
        raise SearchExhaustedError("no negative grid point in the box")
    cell = evaluate_costs(spec.target + np.full(spec.dimension, resolution), spec)
    lo = max(0.0, best_cost - float(cell))
    log.debug("Brute force over %d points: MAC in [%g, %g]", total, lo, best_cost)
    return MacInterval(lo=lo, hi=best_cost, witness=witness)
