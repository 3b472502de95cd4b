"""Weighted Lp costs centred on the target, cost balls and their halfspaces."""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import DegenerateSubgradientError, InvalidInputError

Point = NDArray[np.float64]

# Absolute tolerance for cost comparisons at unit scale.
COST_TOLERANCE = 1e-12


def cost_tolerance(cost: float) -> float:
    """Comparison slack for costs near ``cost``."""
    return COST_TOLERANCE * max(1.0, abs(cost))


def _as_vector(values: ArrayLike, name: str) -> Point:
    vector = np.array(values, dtype=float)
    if vector.ndim != 1 or vector.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class CostSpec:
    """The adversary's cost ``A(x) = (sum_d c_d |x_d - t_d|^p)^(1/p)``.

    Weights may be 0 or infinite; infinite weights make a coordinate
    immutable and zero weights make it free. Operations that cannot work
    with such weights say so explicitly.
    """

    target: Point
    weights: Point
    exponent: float = 1.0

    def __post_init__(self) -> None:
        target = _as_vector(self.target, "target")
        weights = _as_vector(self.weights, "weights")
        if weights.shape != target.shape:
            raise InvalidInputError("target and weights must have the same length")
        if not np.all(np.isfinite(target)):
            raise InvalidInputError("target must be finite in every coordinate")
        if np.any(np.isnan(weights)) or np.any(weights < 0):
            raise InvalidInputError("weights must lie in [0, inf]")
        exponent = float(self.exponent)
        if math.isnan(exponent) or exponent <= 0:
            raise InvalidInputError("exponent must lie in (0, inf]")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "exponent", exponent)

    @classmethod
    def unweighted(
        cls, dimension: int, exponent: float = 1.0, target: ArrayLike | None = None
    ) -> "CostSpec":
        """Unit weights around ``target`` (the origin by default)."""
        if dimension < 1:
            raise InvalidInputError("dimension must be at least 1")
        centre = np.zeros(dimension) if target is None else target
        return cls(target=centre, weights=np.ones(dimension), exponent=exponent)

    @property
    def dimension(self) -> int:
        return self.target.size

    @property
    def is_infinity_norm(self) -> bool:
        return math.isinf(self.exponent)

    @property
    def has_regular_weights(self) -> bool:
        """True when every weight is finite and strictly positive."""
        return bool(np.all(np.isfinite(self.weights)) and np.all(self.weights > 0))

    def cost(self, x: ArrayLike) -> float:
        return evaluate_cost(x, self)

    def norm(self, displacement: ArrayLike) -> float:
        """Cost of ``target + displacement``."""
        return evaluate_cost(self.target + np.asarray(displacement, dtype=float), self)

    def with_weights(self, weights: ArrayLike) -> "CostSpec":
        return CostSpec(target=self.target, weights=weights, exponent=self.exponent)

    def coordinate_scale(self) -> Point:
        """Per-coordinate factor mapping weighted costs to unweighted Lp.

        ``x'_d = s_d (x_d - t_d)`` with ``s_d = c_d^(1/p)``, or ``c_d`` for
        the infinity norm, turns this cost into the plain Lp norm of x'.
        """
        if self.is_infinity_norm:
            return self.weights.copy()
        return self.weights ** (1.0 / self.exponent)


@dataclass(frozen=True)
class CostBall:
    """The sublevel set ``{x : A(x) <= radius}``."""

    spec: CostSpec
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise InvalidInputError("cost-ball radius must be positive")

    def contains(self, x: ArrayLike) -> bool:
        return evaluate_cost(x, self.spec) <= self.radius + cost_tolerance(self.radius)


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The closed halfspace ``{x : normal . x <= offset}``."""

    normal: Point
    offset: float

    def __post_init__(self) -> None:
        normal = _as_vector(self.normal, "normal")
        if not np.any(normal):
            raise InvalidInputError("halfspace normal must not be the zero vector")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, x: ArrayLike) -> bool:
        value = float(np.dot(self.normal, x))
        return value <= self.offset + cost_tolerance(self.offset)

    def contains_many(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        return points @ self.normal <= self.offset + cost_tolerance(self.offset)


class BoundMode(StrEnum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


@dataclass(frozen=True)
class BoundPair:
    """Certified-positive cost ``lower`` (C+) and negative-witness cost ``upper`` (C-).

    Multiplicative searches bisect the exponent (geometric mean) and stop
    once ``upper / lower <= 1 + eps``; additive searches bisect the cost
    and stop once ``upper - lower <= eta``.
    """

    lower: float
    upper: float
    mode: BoundMode = BoundMode.MULTIPLICATIVE

    def __post_init__(self) -> None:
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise InvalidInputError("bounds must be numbers")
        if self.mode is BoundMode.MULTIPLICATIVE and not self.lower > 0:
            raise InvalidInputError(
                "multiplicative bounds require a strictly positive lower bound"
            )
        if self.lower < 0:
            raise InvalidInputError("lower bound must be nonnegative")
        if self.upper < self.lower:
            raise InvalidInputError("upper bound must not be below the lower bound")

    @property
    def gap(self) -> float:
        if self.mode is BoundMode.ADDITIVE:
            return self.upper - self.lower
        return self.upper / self.lower

    def within(self, accuracy: float) -> bool:
        """True once the gap meets the ε (or η) goal."""
        if self.mode is BoundMode.ADDITIVE:
            return self.gap <= accuracy
        return self.gap <= 1.0 + accuracy

    def proposal(self) -> float:
        """The next cost to probe: geometric or arithmetic mean."""
        if self.mode is BoundMode.ADDITIVE:
            return (self.lower + self.upper) / 2.0
        # Log space keeps doubly exponential gaps finite.
        return math.exp((math.log(self.lower) + math.log(self.upper)) / 2.0)

    def with_lower(self, lower: float) -> "BoundPair":
        return BoundPair(lower=lower, upper=self.upper, mode=self.mode)

    def with_upper(self, upper: float) -> "BoundPair":
        return BoundPair(lower=self.lower, upper=upper, mode=self.mode)

    def steps(self, accuracy: float) -> int:
        return steps_for_gap(self, accuracy)


def _weighted_terms(delta: Point, weights: Point, exponent: float) -> Point:
    # 0 * inf is nan; untouched coordinates cost nothing whatever their weight.
    with np.errstate(invalid="ignore", over="ignore"):
        if math.isinf(exponent):
            terms = weights * delta
        else:
            terms = weights * delta**exponent
    return np.where(delta > 0, terms, 0.0)


def evaluate_cost(x: ArrayLike, spec: CostSpec) -> float:
    """Weighted Lp cost of ``x`` relative to the target; max-norm for p = inf."""
    point = np.asarray(x, dtype=float)
    if point.shape != spec.target.shape:
        raise InvalidInputError(
            f"point has shape {point.shape}, expected {spec.target.shape}"
        )
    if not np.all(np.isfinite(point)):
        raise InvalidInputError("point must be finite in every coordinate")
    delta = np.abs(point - spec.target)
    terms = _weighted_terms(delta, spec.weights, spec.exponent)
    if spec.is_infinity_norm:
        return float(np.max(terms))
    if spec.exponent == 1.0:
        return float(np.sum(terms))
    return float(np.sum(terms) ** (1.0 / spec.exponent))


def evaluate_costs(points: NDArray[np.float64], spec: CostSpec) -> NDArray[np.float64]:
    """Vectorised ``evaluate_cost`` over the rows of ``points``."""
    delta = np.abs(np.asarray(points, dtype=float) - spec.target)
    terms = _weighted_terms(delta, spec.weights, spec.exponent)
    if spec.is_infinity_norm:
        return np.max(terms, axis=-1)
    if spec.exponent == 1.0:
        return np.sum(terms, axis=-1)
    return np.sum(terms, axis=-1) ** (1.0 / spec.exponent)


def _require_regular_weights(spec: CostSpec, operation: str) -> None:
    if not spec.has_regular_weights:
        raise InvalidInputError(f"{operation} requires finite, positive weights")


def l1_ball_vertices(cost: float, spec: CostSpec) -> NDArray[np.float64]:
    """The 2D vertices ``target ± (C / c_d) e_d``, ordered +1, -1, +2, -2, ..."""
    if spec.exponent != 1.0:
        raise InvalidInputError("cost-ball vertices are defined for p = 1")
    _require_regular_weights(spec, "l1_ball_vertices")
    if not cost > 0:
        raise InvalidInputError("cost must be positive")
    offsets = np.diag(cost / spec.weights)
    vertices = np.empty((2 * spec.dimension, spec.dimension))
    vertices[0::2] = spec.target + offsets
    vertices[1::2] = spec.target - offsets
    return vertices


def steps_for_gap(bounds: BoundPair, accuracy: float) -> int:
    """Binary-search steps needed to shrink ``bounds`` to the accuracy goal."""
    if not accuracy > 0:
        raise InvalidInputError("accuracy must be positive")
    if bounds.within(accuracy):
        return 0
    if bounds.mode is BoundMode.ADDITIVE:
        exponent = math.log2(bounds.gap / accuracy)
    else:
        exponent = math.log2(math.log2(bounds.gap) / math.log2(1.0 + accuracy))
    # Exact powers of two must not round up to an extra step.
    return max(0, math.ceil(exponent - 1e-12))


def subgradient_halfspace(y: ArrayLike, spec: CostSpec) -> Halfspace:
    """Halfspace through ``y`` containing every x with ``A(x) <= A(y)``."""
    if spec.exponent < 1:
        raise InvalidInputError("subgradients require p >= 1")
    _require_regular_weights(spec, "subgradient_halfspace")
    point = np.asarray(y, dtype=float)
    cost = evaluate_cost(point, spec)
    delta = point - spec.target
    if not np.any(delta):
        raise DegenerateSubgradientError("no subgradient direction at the target")
    signs = np.sign(delta)
    if spec.exponent == 1.0:
        normal = spec.weights * signs
    elif spec.is_infinity_norm:
        # Every coordinate attaining the maximum joins the face normal.
        attained = np.isclose(spec.weights * np.abs(delta), cost, rtol=1e-12, atol=0)
        normal = spec.weights * signs * attained
    else:
        normal = spec.weights * signs * (np.abs(delta) / cost) ** (spec.exponent - 1)
    return Halfspace(normal=normal, offset=float(np.dot(normal, point)))


def _dual_exponent(exponent: float) -> float:
    if exponent == 1.0:
        return math.inf
    if math.isinf(exponent):
        return 1.0
    return exponent / (exponent - 1.0)


def _scaled_normal(normal: ArrayLike, spec: CostSpec) -> Point:
    w = _as_vector(normal, "normal")
    if w.shape != spec.target.shape:
        raise InvalidInputError("normal and target must have the same length")
    if not np.any(w):
        raise InvalidInputError("normal must not be the zero vector")
    if spec.exponent < 1:
        raise InvalidInputError("halfspace minimisation requires p >= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = w / spec.coordinate_scale()
    # A free coordinate (zero weight) along a nonzero normal makes any
    # displacement free; an immutable one contributes nothing.
    return np.where(w == 0, 0.0, scaled)


def displacement(normal: ArrayLike, anchor: ArrayLike, spec: CostSpec) -> float:
    """``(b - target) . w`` for the halfspace ``{x : x . w >= b . w}``."""
    return float(np.dot(np.asarray(anchor, dtype=float) - spec.target, normal))


def lp_mac_from_displacement(normal: ArrayLike, offset: float, spec: CostSpec) -> float:
    """MAC of ``{x : (x - target) . w >= offset}``: offset over the dual norm."""
    if offset <= 0:
        return 0.0
    scaled = _scaled_normal(normal, spec)
    dual_norm = float(np.linalg.norm(scaled, ord=_dual_exponent(spec.exponent)))
    if math.isinf(dual_norm):
        return 0.0
    return offset / dual_norm


def halfspace_lp_mac(normal: ArrayLike, anchor: ArrayLike, spec: CostSpec) -> float:
    """Exact minimal cost over the negative set ``{x : x . w >= b . w}``."""
    return lp_mac_from_displacement(normal, displacement(normal, anchor, spec), spec)


def halfspace_lp_minimizer(
    normal: ArrayLike, anchor: ArrayLike, spec: CostSpec
) -> Point:
    """A point of ``{x : x . w >= b . w}`` attaining ``halfspace_lp_mac``.

    The minimiser is built in the rescaled coordinates where the cost is a
    plain Lp norm (Hölder equality), then mapped back.
    """
    offset = displacement(normal, anchor, spec)
    if offset <= 0:
        return spec.target.copy()
    _require_regular_weights(spec, "halfspace_lp_minimizer")
    scaled = _scaled_normal(normal, spec)
    if spec.exponent == 1.0:
        axis = int(np.argmax(np.abs(scaled)))
        direction = np.zeros_like(scaled)
        direction[axis] = np.sign(scaled[axis])
    elif spec.is_infinity_norm:
        direction = np.sign(scaled)
    else:
        dual = _dual_exponent(spec.exponent)
        direction = np.sign(scaled) * np.abs(scaled) ** (dual - 1)
    step = offset / float(np.dot(scaled, direction))
    return spec.target + step * direction / spec.coordinate_scale()
