"""Hit-and-run sampling from convex bodies known only through membership."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from convex_evasion.core.errors import DegenerateBodyError, InvalidInputError
from convex_evasion.geometry.cost import (
    CostSpec,
    Halfspace,
    cost_tolerance,
    evaluate_costs,
)
from convex_evasion.oracles.membership import NEGATIVE, Oracle, query_many

log = logging.getLogger(__name__)

MAX_SHRINKS = 100
# Smallest axis perturbation tried while seeding, relative to the radius.
MIN_SEED_FRACTION = 2.0**-40


@dataclass
class FeasibleBody:
    """``X- ∩ B^{2R} ∩ cuts``: convex as an intersection of convex sets.

    Geometric constraints are checked before the oracle, so points outside
    the cost ball or a cut never spend a query. Each cut carries a level:
    it keeps every point costing at most that level, so it stays valid for
    any proposal up to it.
    """

    oracle: Oracle
    spec: CostSpec
    radius: float
    cuts: list[Halfspace] = field(default_factory=list)
    levels: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise InvalidInputError("the bounding radius must be positive")
        if not self.levels:
            self.levels = [math.inf] * len(self.cuts)
        if len(self.levels) != len(self.cuts):
            raise InvalidInputError("every cut needs exactly one level")
        dimension = self.spec.dimension
        self._normals = np.array([cut.normal for cut in self.cuts]).reshape(-1, dimension)
        self._limits = np.array(
            [cut.offset + cost_tolerance(cut.offset) for cut in self.cuts]
        )

    @property
    def diameter(self) -> float:
        """Cost-diameter of the bounding ball ``B^{2R}``."""
        return 4.0 * self.radius

    def inside_geometry(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        """Rows of ``points`` inside the bounding ball and every cut."""
        points = np.atleast_2d(points)
        limit = 2.0 * self.radius
        inside = np.all(np.isfinite(points), axis=1)
        inside[inside] = evaluate_costs(points[inside], self.spec) <= limit + cost_tolerance(
            limit
        )
        if self.cuts:
            inside &= np.all(points @ self._normals.T <= self._limits, axis=1)
        return inside

    def contains(self, x: ArrayLike) -> bool:
        point = np.asarray(x, dtype=float)
        if not self.inside_geometry(point)[0]:
            return False
        return self.oracle.query(point) == NEGATIVE

    def contains_many(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        """Membership of every row; only rows inside the geometry are queried."""
        inside = self.inside_geometry(points)
        if np.any(inside):
            inside[inside] = query_many(self.oracle, points[inside]) == NEGATIVE
        return inside

    def chord(
        self, points: NDArray[np.float64], directions: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Offsets ``(low, high)`` bracketing each line ``x + t·v`` in the body.

        Cuts bound the line exactly. The ball bounds it by its diameter when
        ``v`` has unit cost, since the line starts inside the ball.
        """
        count = points.shape[0]
        low = np.full(count, -self.diameter)
        high = np.full(count, self.diameter)
        if self.cuts:
            rates = directions @ self._normals.T
            slack = np.maximum(self._limits - points @ self._normals.T, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                reach = slack / rates
            high = np.minimum(high, np.min(np.where(rates > 0, reach, np.inf), axis=1))
            low = np.maximum(low, np.max(np.where(rates < 0, reach, -np.inf), axis=1))
        return low, high

    def with_cut(self, cut: Halfspace, level: float = math.inf) -> "FeasibleBody":
        return FeasibleBody(
            self.oracle, self.spec, self.radius, [*self.cuts, cut], [*self.levels, level]
        )

    def valid_at(self, cost: float) -> "FeasibleBody":
        """The body without the cuts that could exclude points cheaper than ``cost``."""
        keep = [level >= cost for level in self.levels]
        if all(keep):
            return self
        return FeasibleBody(
            self.oracle,
            self.spec,
            self.radius,
            [cut for cut, kept in zip(self.cuts, keep, strict=True) if kept],
            [level for level, kept in zip(self.levels, keep, strict=True) if kept],
        )


class SampleSet:
    """Points Q believed uniform in the current body, with the run's RNG."""

    def __init__(self, points: ArrayLike, rng: np.random.Generator) -> None:
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.rng = rng

    def __len__(self) -> int:
        return 0 if self.points.size == 0 else self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def mean(self) -> NDArray[np.float64]:
        return self.points.mean(axis=0)

    def second_moment(self) -> NDArray[np.float64]:
        """Covariance about the sample mean."""
        centred = self.points - self.mean()
        return centred.T @ centred / max(len(self), 1)

    def halves(self) -> tuple["SampleSet", "SampleSet"]:
        middle = len(self) // 2
        return (
            SampleSet(self.points[:middle], self.rng),
            SampleSet(self.points[middle:], self.rng),
        )

    def retain(self, cut: Halfspace) -> "SampleSet":
        """Rejection step: keep the members satisfying ``cut``."""
        kept = self.points[cut.contains_many(self.points)] if len(self) else self.points
        return SampleSet(kept.reshape(-1, self.dimension), self.rng)

    def choice(self) -> NDArray[np.float64]:
        return self.points[self.rng.integers(len(self))]


def _directions(
    samples: SampleSet, count: int, spec: CostSpec, centred: bool
) -> NDArray[np.float64]:
    """``count`` unit-cost directions, random combinations of the samples."""
    rng = samples.rng
    basis = samples.points - samples.mean() if centred else samples.points
    directions = rng.standard_normal((count, len(samples))) @ basis
    norms = evaluate_costs(spec.target + directions, spec)
    # A single sample (or coincident ones) spans no covariance.
    flat = ~(np.isfinite(norms) & (norms > 0))
    if np.any(flat):
        directions[flat] = rng.standard_normal((int(flat.sum()), samples.dimension))
        norms[flat] = evaluate_costs(spec.target + directions[flat], spec)
    return directions / norms[:, np.newaxis]


def walk(
    body: FeasibleBody,
    samples: SampleSet,
    starts: ArrayLike,
    steps: int,
    *,
    centred: bool = True,
) -> NDArray[np.float64]:
    """Advance one hit-and-run walker per row of ``starts`` by ``steps`` chords.

    Every chord is bracketed geometrically and a uniform point on it is
    found by shrinking the bracket towards the current point after every
    rejection. All walkers move together, so each shrink round is one
    batch of oracle queries.
    """
    if len(samples) == 0:
        raise InvalidInputError("hit-and-run needs at least one sample")
    x = np.array(starts, dtype=float, ndmin=2)
    rng = samples.rng
    for _ in range(steps):
        directions = _directions(samples, x.shape[0], body.spec, centred)
        low, high = body.chord(x, directions)
        pending = np.arange(x.shape[0])
        for _ in range(MAX_SHRINKS):
            offsets = rng.uniform(low[pending], high[pending])
            candidates = x[pending] + offsets[:, np.newaxis] * directions[pending]
            accepted = body.contains_many(candidates)
            x[pending[accepted]] = candidates[accepted]
            rejected = pending[~accepted]
            missed = offsets[~accepted]
            low[rejected] = np.where(missed < 0, missed, low[rejected])
            high[rejected] = np.where(missed >= 0, missed, high[rejected])
            pending = rejected
            if pending.size == 0:
                break
        else:
            raise DegenerateBodyError("no feasible point found on the chord")
    return x


def hit_and_run(
    body: FeasibleBody,
    samples: SampleSet,
    start: ArrayLike,
    steps: int,
    *,
    centred: bool = True,
) -> NDArray[np.float64]:
    """Random walk of ``steps`` chords, each drawn from the sample covariance."""
    return walk(body, samples, [np.asarray(start, dtype=float)], steps, centred=centred)[0]


def _seed(body: FeasibleBody, negative: NDArray) -> list[NDArray]:
    scale = body.spec.coordinate_scale()
    seeds = [negative]
    for axis in range(negative.size):
        for sign in (1.0, -1.0):
            delta = body.radius / 8.0
            while delta >= body.radius * MIN_SEED_FRACTION:
                candidate = negative.copy()
                candidate[axis] += sign * delta / scale[axis]
                if body.contains(candidate):
                    seeds.append(candidate)
                    break
                delta /= 2.0
    return seeds


def draw(
    body: FeasibleBody,
    samples: SampleSet,
    count: int,
    steps: int,
    *,
    centred: bool = True,
) -> SampleSet:
    """``count`` walks started from random members of ``samples``."""
    if len(samples) == 0:
        raise InvalidInputError("hit-and-run needs at least one sample")
    starts = samples.points[samples.rng.integers(len(samples), size=count)]
    return SampleSet(walk(body, samples, starts, steps, centred=centred), samples.rng)


def approximate_rounding(
    body: FeasibleBody,
    negative: ArrayLike,
    rounds: int,
    size: int,
    steps: int,
    rng: np.random.Generator,
    *,
    centred: bool = True,
) -> SampleSet:
    """Spread samples across the body so their covariance shapes later walks.

    Seeds are the negative point and the largest feasible axis perturbations
    of it. Each round replaces the set by ``size`` hit-and-run endpoints
    whose chord directions are drawn from the previous round's covariance.
    The result is approximately, not provably, near-isotropic.
    """
    if rounds < 0:
        raise InvalidInputError("rounds must be nonnegative")
    if not body.spec.has_regular_weights:
        raise InvalidInputError("rounding requires finite, positive weights")
    if body.spec.exponent < 1:
        raise InvalidInputError("rounding requires a convex cost ball, p >= 1")
    seeds = _seed(body, np.asarray(negative, dtype=float))
    if len(seeds) == 1:
        raise DegenerateBodyError("the body is too thin around the negative point")
    samples = SampleSet(seeds, rng)
    for round_number in range(1, rounds + 1):
        samples = draw(body, samples, size, steps, centred=centred)
        spread = float(np.trace(samples.second_moment()))
        log.debug("Rounding round %d: covariance trace %g", round_number, spread)
    return samples
