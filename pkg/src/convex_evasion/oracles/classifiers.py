"""Synthetic classifiers with known convex structure and ground-truth MAC."""

from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import InvalidInputError, NotAvailableError
from convex_evasion.geometry.cost import (
    CostBall,
    CostSpec,
    Halfspace,
    cost_tolerance,
    evaluate_cost,
    evaluate_costs,
    halfspace_lp_minimizer,
    lp_mac_from_displacement,
)
from convex_evasion.oracles.membership import NEGATIVE, POSITIVE


class ConvexSide(StrEnum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    BOTH = "both"
    NONE = "none"


def _same_cost(left: CostSpec, right: CostSpec) -> bool:
    return (
        left.exponent == right.exponent
        and np.array_equal(left.target, right.target)
        and np.array_equal(left.weights, right.weights)
    )


def _labels(negative: NDArray[np.bool_]) -> NDArray[np.int64]:
    return np.where(negative, NEGATIVE, POSITIVE)


class SyntheticClassifier(ABC):
    """A pointwise-decidable classifier tagged with its convex class."""

    convex_side: ConvexSide

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        """Labels for the rows of ``points``."""

    def predict(self, x: ArrayLike) -> int:
        return int(self.predict_many(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def analytic_mac(self, spec: CostSpec) -> float:
        raise NotAvailableError(f"{type(self).__name__} has no closed-form MAC")


class HalfspaceClassifier(SyntheticClassifier):
    """Negative on the closed halfspace ``{x : x . w >= b . w}``."""

    convex_side = ConvexSide.BOTH

    def __init__(self, normal: ArrayLike, anchor: ArrayLike) -> None:
        self.boundary = Halfspace(normal, float(np.dot(normal, anchor)))
        self.anchor = np.asarray(anchor, dtype=float)
        if self.anchor.shape != self.boundary.normal.shape:
            raise InvalidInputError("normal and anchor must have the same length")

    @property
    def normal(self) -> NDArray[np.float64]:
        return self.boundary.normal

    @property
    def dimension(self) -> int:
        return self.normal.size

    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        return _labels(points @ self.normal >= self.boundary.offset)

    def analytic_mac(self, spec: CostSpec) -> float:
        offset = self.boundary.offset - float(np.dot(self.normal, spec.target))
        return lp_mac_from_displacement(self.normal, offset, spec)


class OpenCostBallClassifier(SyntheticClassifier):
    """Positive exactly on the open ball ``{x : A(x) < threshold}``."""

    convex_side = ConvexSide.POSITIVE

    def __init__(self, spec: CostSpec, threshold: float) -> None:
        if not threshold > 0:
            raise InvalidInputError("threshold must be positive")
        self.spec = spec
        self.threshold = float(threshold)

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def predict(self, x: ArrayLike) -> int:
        return POSITIVE if evaluate_cost(x, self.spec) < self.threshold else NEGATIVE

    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        return _labels(evaluate_costs(points, self.spec) >= self.threshold)

    def analytic_mac(self, spec: CostSpec) -> float:
        if not _same_cost(spec, self.spec):
            raise NotAvailableError("ball MAC is only known under its own cost")
        return self.threshold


class PolytopeClassifier(SyntheticClassifier):
    """Positive on the open polytope ``{x : h . x < offset for every face}``."""

    convex_side = ConvexSide.POSITIVE

    def __init__(self, faces: Sequence[Halfspace]) -> None:
        if not faces:
            raise InvalidInputError("a polytope needs at least one face")
        self.faces = list(faces)
        self.normals = np.stack([face.normal for face in self.faces])
        self.offsets = np.array([face.offset for face in self.faces])

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        return _labels(np.any(points @ self.normals.T >= self.offsets, axis=-1))

    def analytic_mac(self, spec: CostSpec) -> float:
        return min(
            lp_mac_from_displacement(
                face.normal, face.offset - float(np.dot(face.normal, spec.target)), spec
            )
            for face in self.faces
        )


class ConvexNegativeClassifier(SyntheticClassifier):
    """Negative on a closed convex body: halfspace faces and an optional cost ball."""

    convex_side = ConvexSide.NEGATIVE

    def __init__(
        self, faces: Sequence[Halfspace] = (), ball: CostBall | None = None
    ) -> None:
        if not faces and ball is None:
            raise InvalidInputError("a convex body needs faces or a ball")
        self.faces = list(faces)
        self.ball = ball
        self.normals = np.stack([face.normal for face in self.faces]) if faces else None
        self.offsets = np.array([face.offset for face in self.faces])

    @property
    def dimension(self) -> int:
        if self.normals is not None:
            return self.normals.shape[1]
        return self.ball.spec.dimension

    def contains_many(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        inside = np.ones(points.shape[0], dtype=bool)
        if self.normals is not None:
            slack = np.array([cost_tolerance(offset) for offset in self.offsets])
            inside &= np.all(points @ self.normals.T <= self.offsets + slack, axis=-1)
        if self.ball is not None:
            radius = self.ball.radius
            costs = evaluate_costs(points, self.ball.spec)
            inside &= costs <= radius + cost_tolerance(radius)
        return inside

    def contains(self, x: ArrayLike) -> bool:
        return bool(self.contains_many(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        return _labels(self.contains_many(points))

    def analytic_mac(self, spec: CostSpec) -> float:
        """Exact when some violated face's minimiser already lies in the body."""
        if self.contains(spec.target):
            return 0.0
        for face in self.faces:
            if face.contains(spec.target):
                continue
            # The body lies in {x : -h . x >= -offset}.
            anchor = face.normal * face.offset / float(face.normal @ face.normal)
            candidate = halfspace_lp_minimizer(-face.normal, anchor, spec)
            if self.contains(candidate):
                return evaluate_cost(candidate, spec)
        raise NotAvailableError("no face minimiser lies inside the body")


class PocketedClassifier(SyntheticClassifier):
    """A convex-positive classifier with a negative pocket carved out of it.

    The positive set is no longer convex; this is the injected bug that
    the vertex-witness check must catch.
    """

    convex_side = ConvexSide.NONE

    def __init__(self, base: SyntheticClassifier, pocket: CostBall) -> None:
        self.base = base
        self.pocket = pocket

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def predict_many(self, points: NDArray[np.float64]) -> NDArray[np.int64]:
        radius = self.pocket.radius
        in_pocket = evaluate_costs(points, self.pocket.spec) <= radius
        return np.where(in_pocket, NEGATIVE, self.base.predict_many(points))


def analytic_mac(classifier: SyntheticClassifier, spec: CostSpec) -> float:
    """Closed-form MAC, or NotAvailableError for brute-force fallback."""
    return classifier.analytic_mac(spec)


def axis_box(dimension: int, half_width: float) -> list[Halfspace]:
    """Faces of the box ``|x_d| <= half_width``."""
    faces = []
    for axis in range(dimension):
        unit = np.zeros(dimension)
        unit[axis] = 1.0
        faces.append(Halfspace(unit, half_width))
        faces.append(Halfspace(-unit, half_width))
    return faces


def halfspace_box(
    dimension: int, threshold: float, half_width: float
) -> ConvexNegativeClassifier:
    """Negative body ``{x : x_1 >= threshold}`` clipped to ``|x_d| <= half_width``."""
    if not 0 < threshold < half_width:
        raise InvalidInputError("threshold must lie strictly inside the box")
    first = np.zeros(dimension)
    first[0] = -1.0
    return ConvexNegativeClassifier(
        faces=[Halfspace(first, -threshold), *axis_box(dimension, half_width)]
    )


def random_polytope(
    rng: np.random.Generator,
    spec: CostSpec,
    faces: int,
    distances: Iterable[float] | None = None,
) -> PolytopeClassifier:
    """Faces with uniformly random normals at the given distances from the target."""
    normals = rng.normal(size=(faces, spec.dimension))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if distances is None:
        distances = rng.uniform(1.0, 3.0, size=faces)
    halfspaces = [
        Halfspace(normal, float(normal @ spec.target) + distance)
        for normal, distance in zip(normals, distances, strict=True)
    ]
    return PolytopeClassifier(halfspaces)


def replay_against_ball(
    transcript: Iterable[tuple[ArrayLike, int]], spec: CostSpec, threshold: float
) -> bool:
    """True when every recorded label agrees with the open ball at ``threshold``."""
    ball = OpenCostBallClassifier(spec, threshold)
    return all(ball.predict(point) == label for point, label in transcript)
