"""Property suites that check the geometry, oracles and searches against
independent ground truth: brute-force grids, numeric minimisation and
sampling statistics."""

import logging
import math
import time
import zlib
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import null_space
from scipy.optimize import linprog, minimize

from convex_evasion.core.errors import EvasionError, InvalidInputError
from convex_evasion.geometry.bounds import enclosed_lp_radius
from convex_evasion.geometry.cost import (
    BoundPair,
    CostBall,
    CostSpec,
    Halfspace,
    cost_tolerance,
    displacement,
    evaluate_cost,
    evaluate_costs,
    halfspace_lp_mac,
    l1_ball_vertices,
    steps_for_gap,
    subgradient_halfspace,
)
from convex_evasion.oracles.brute_force import brute_force_mac
from convex_evasion.oracles.classifiers import (
    ConvexNegativeClassifier,
    PocketedClassifier,
    SyntheticClassifier,
    random_polytope,
    replay_against_ball,
)
from convex_evasion.oracles.membership import NEGATIVE, MaliciousOracle, MembershipOracle
from convex_evasion.search.positive import SearchEngine, convex_search
from convex_evasion.search.sampling import FeasibleBody, approximate_rounding, draw

log = logging.getLogger(__name__)

NORM_EXPONENTS = (1.0, 1.5, 2.0, 3.0, math.inf)
# Grid points per half-axis in the vertex-witness check.
GRID_STEPS = 40
# Grid cells per box side when brute-forcing the MAC of a polytope.
MAC_GRID_CELLS = 60
MAX_REPORTED_FAILURES = 20


@dataclass
class VerifyOptions:
    seed: int = 0
    inject_nonconvex: bool = False
    cases: int = 100
    samples: int = 100_000
    walk_samples: int = 2000
    walk_steps: int = 30


@dataclass
class SuiteReport:
    name: str
    passed: bool
    checks: int
    failures: list[str]
    seconds: float


@dataclass
class VerifyReport:
    suites: list[SuiteReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(suite.passed for suite in self.suites)


class _Checks:
    def __init__(self) -> None:
        self.count = 0
        self.failures: list[str] = []

    def expect(self, condition: bool, message: str) -> None:
        self.count += 1
        if not condition and len(self.failures) < MAX_REPORTED_FAILURES:
            self.failures.append(message)

    def expect_all(self, conditions: NDArray[np.bool_], message: str) -> None:
        self.count += int(conditions.size)
        bad = int(conditions.size - np.count_nonzero(conditions))
        if bad and len(self.failures) < MAX_REPORTED_FAILURES:
            self.failures.append(f"{message} ({bad} of {conditions.size})")


Suite = Callable[[np.random.Generator, VerifyOptions, _Checks], None]
SUITES: dict[str, Suite] = {}
SUITE_ALIASES = {"lemma2": "vertex-witness", "lemma10": "halfspace-mac"}


def suite(name: str) -> Callable[[Suite], Suite]:
    def register(function: Suite) -> Suite:
        SUITES[name] = function
        return function

    return register


def _random_spec(rng: np.random.Generator, exponent: float, dimension: int) -> CostSpec:
    return CostSpec(
        target=rng.normal(size=dimension),
        weights=rng.uniform(0.5, 2.0, size=dimension),
        exponent=exponent,
    )


@suite("cost-axioms")
def check_cost_axioms(rng: np.random.Generator, options: VerifyOptions, checks: _Checks):
    """Triangle inequality and absolute homogeneity of the weighted norms."""
    count = options.samples
    for exponent in (0.5, *NORM_EXPONENTS):
        dimension = int(rng.integers(2, 6))
        spec = _random_spec(rng, exponent, dimension)
        x = rng.normal(size=(count, dimension))
        y = rng.normal(size=(count, dimension))
        alpha = rng.uniform(-5.0, 5.0, size=count)
        nx = evaluate_costs(spec.target + x, spec)
        ny = evaluate_costs(spec.target + y, spec)
        scaled = evaluate_costs(spec.target + alpha[:, np.newaxis] * x, spec)
        checks.expect_all(
            np.abs(scaled - np.abs(alpha) * nx) <= 1e-9 * np.maximum(1.0, scaled),
            f"homogeneity fails at p={exponent:g}",
        )
        checks.expect(evaluate_cost(spec.target, spec) == 0.0, "target has nonzero cost")
        if exponent >= 1:
            nxy = evaluate_costs(spec.target + x + y, spec)
            checks.expect_all(
                nxy <= (nx + ny) * (1 + 1e-12) + 1e-12,
                f"triangle inequality fails at p={exponent:g}",
            )


def _ball_grid(spec: CostSpec, cost: float, steps: int) -> NDArray[np.float64]:
    """Grid points of the L1 cost ball; the ball's vertices are among them."""
    ticks = np.arange(-steps, steps + 1) * (cost / steps)
    axes = [spec.target[d] + ticks / spec.weights[d] for d in range(spec.dimension)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dimension)
    return mesh[evaluate_costs(mesh, spec) <= cost + cost_tolerance(cost)]


def _pocketed(
    base: SyntheticClassifier, spec: CostSpec, cost: float
) -> PocketedClassifier:
    """Carve a negative pocket around a grid point at half the cost, off every axis."""
    centre = spec.target.copy()
    centre[:2] += (cost / 4.0) / spec.weights[:2]
    pocket_spec = CostSpec(target=centre, weights=spec.weights, exponent=1.0)
    return PocketedClassifier(base, CostBall(pocket_spec, cost / 10.0))


@suite("vertex-witness")
def check_vertex_witness(rng: np.random.Generator, options: VerifyOptions, checks: _Checks):
    """A convex positive set meets the cost ball's complement at a vertex.

    Compares "some grid point at cost <= C is negative" with "some L1-ball
    vertex is negative" on random polytopes, and brackets each polytope's
    closed-form MAC by a brute-force grid.
    """
    for case in range(options.cases):
        dimension = 2 + case % 2
        spec = _random_spec(rng, 1.0, dimension)
        polytope = random_polytope(rng, spec, int(rng.integers(3, 9)))
        mac = polytope.analytic_mac(spec)
        if options.inject_nonconvex:
            cost = 0.9 * mac
            classifier = _pocketed(polytope, spec, cost)
        else:
            cost = mac * rng.uniform(0.5, 1.5)
            classifier = polytope
        grid = _ball_grid(spec, cost, GRID_STEPS)
        grid_negative = bool(np.any(classifier.predict_many(grid) == NEGATIVE))
        vertices = l1_ball_vertices(cost, spec)
        vertex_negative = bool(np.any(classifier.predict_many(vertices) == NEGATIVE))
        checks.expect(
            grid_negative == vertex_negative,
            f"case {case}: grid says {grid_negative}, vertices say {vertex_negative} "
            f"at C={cost:.6g}",
        )
        if not options.inject_nonconvex:
            reach = 1.25 * mac / spec.weights
            interval = brute_force_mac(
                polytope,
                spec,
                2.0 * float(reach.max()) / MAC_GRID_CELLS,
                (spec.target - reach, spec.target + reach),
            )
            slack = cost_tolerance(mac)
            checks.expect(
                interval.lo - slack <= mac <= interval.hi + slack,
                f"case {case}: MAC {mac:.6g} outside the grid bracket "
                f"[{interval.lo:.6g}, {interval.hi:.6g}]",
            )


@suite("subgradient")
def check_subgradient(rng: np.random.Generator, options: VerifyOptions, checks: _Checks):
    """Every point no costlier than y lies in y's subgradient halfspace."""
    per_point = 50
    points = max(1, options.samples // (per_point * len(NORM_EXPONENTS)))
    for exponent in NORM_EXPONENTS:
        spec = _random_spec(rng, exponent, int(rng.integers(2, 6)))
        for _ in range(points):
            y = spec.target + rng.normal(size=spec.dimension)
            cut = subgradient_halfspace(y, spec)
            budget = evaluate_cost(y, spec)
            directions = rng.normal(size=(per_point, spec.dimension))
            norms = evaluate_costs(spec.target + directions, spec)
            scale = rng.uniform(0.0, 1.0, size=per_point) * budget / norms
            z = spec.target + scale[:, np.newaxis] * directions
            slack = 1e-9 * (abs(cut.offset) + np.abs(z) @ np.abs(cut.normal))
            checks.expect_all(
                z @ cut.normal <= cut.offset + slack,
                f"subgradient halfspace misses a cheaper point at p={exponent:g}",
            )


@suite("malicious-replay")
def check_malicious_replay(
    rng: np.random.Generator, options: VerifyOptions, checks: _Checks
):
    """Searches against the gap-halving adversary need every bisection, and
    the adversary's answers stay consistent with one open cost ball."""
    lower, upper, accuracy = 1.0, 2.0**32, 0.01
    required = steps_for_gap(BoundPair(lower, upper), accuracy)
    for trial in range(max(1, options.cases // 10)):
        spec = _random_spec(rng, 1.0, int(rng.integers(2, 6)))
        negative = spec.target.copy()
        negative[0] += upper / spec.weights[0]
        for engine in SearchEngine:
            oracle = MaliciousOracle.from_costs(spec, lower, upper, retain=True)
            result = convex_search(spec, negative, accuracy, lower, oracle, engine=engine)
            checks.expect(result.converged, f"trial {trial}: {engine} did not converge")
            checks.expect(
                result.bisections >= required,
                f"trial {trial}: {engine} converged after {result.bisections} "
                f"bisections, fewer than {required}",
            )
            checks.expect(
                replay_against_ball(oracle.ledger.transcript, spec, oracle.bounds.upper),
                f"trial {trial}: {engine} transcript contradicts the final ball",
            )


def unit_box() -> ConvexNegativeClassifier:
    faces = []
    for axis in range(2):
        unit = np.zeros(2)
        unit[axis] = 1.0
        faces += [Halfspace(unit, 1.0), Halfspace(-unit, 0.0)]
    return ConvexNegativeClassifier(faces=faces)


def box_uniformity(
    count: int, steps: int, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Hit-and-run endpoints in the unit square: coordinate means and quadrant counts."""
    spec = CostSpec.unweighted(2, exponent=2.0, target=[0.5, 0.5])
    body = FeasibleBody(MembershipOracle(unit_box()), spec, radius=1.0)
    seeds = approximate_rounding(body, spec.target, 1, 50, 20, rng)
    points = draw(body, seeds, count, steps).points
    upper = points >= 0.5
    quadrants = np.bincount(upper[:, 0] * 2 + upper[:, 1], minlength=4)
    return points.mean(axis=0), quadrants


@suite("hit-and-run")
def check_hit_and_run(rng: np.random.Generator, options: VerifyOptions, checks: _Checks):
    """Endpoints of the walk are close to uniform on the unit square."""
    count = options.walk_samples
    means, quadrants = box_uniformity(count, options.walk_steps, rng)
    checks.expect_all(np.abs(means - 0.5) <= 0.05, f"coordinate means {means}")
    checks.expect_all(
        np.abs(quadrants - count / 4) <= 0.15 * count / 4, f"quadrant counts {quadrants}"
    )


def _numeric_lp_mac(
    normal: NDArray[np.float64], offset: float, spec: CostSpec
) -> float:
    """Minimal cost over ``(x - t) . w >= offset`` by linear programming or BFGS."""
    dimension = spec.dimension
    weights = spec.weights
    if spec.exponent == 1.0 or spec.is_infinity_norm:
        # Variables: the displacement, then per-coordinate magnitudes (p = 1)
        # or one common magnitude (p = inf).
        identity = np.eye(dimension)
        if spec.exponent == 1.0:
            objective = np.concatenate([np.zeros(dimension), weights])
            bound_rows = np.block([[identity, -identity], [-identity, -identity]])
            slack = dimension
        else:
            objective = np.concatenate([np.zeros(dimension), [1.0]])
            scaled = np.diag(weights)
            column = -np.ones((dimension, 1))
            bound_rows = np.block([[scaled, column], [-scaled, column]])
            slack = 1
        reach = np.concatenate([-normal, np.zeros(slack)])[np.newaxis, :]
        solution = linprog(
            objective,
            A_ub=np.vstack([bound_rows, reach]),
            b_ub=np.concatenate([np.zeros(2 * dimension), [-offset]]),
            bounds=[(None, None)] * dimension + [(0, None)] * slack,
            method="highs",
        )
        return float(solution.fun)

    # Minimise over the boundary plane, parametrised by its null space.
    exponent = spec.exponent
    base = offset * normal / float(normal @ normal)
    basis = null_space(normal[np.newaxis, :])

    def objective(y: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        delta = base + basis @ y
        magnitude = np.abs(delta)
        value = float(weights @ magnitude**exponent)
        gradient = basis.T @ (weights * exponent * magnitude ** (exponent - 1) * np.sign(delta))
        return value, gradient

    solution = minimize(
        objective,
        np.zeros(basis.shape[1]),
        jac=True,
        method="BFGS",
        options={"gtol": 1e-13, "maxiter": 10_000},
    )
    return float(solution.fun) ** (1.0 / exponent)


@suite("halfspace-mac")
def check_halfspace_mac(rng: np.random.Generator, options: VerifyOptions, checks: _Checks):
    """The closed-form halfspace MAC matches numeric minimisation."""
    for exponent in NORM_EXPONENTS:
        for case in range(options.cases):
            spec = _random_spec(rng, exponent, int(rng.integers(2, 6)))
            normal = rng.normal(size=spec.dimension)
            shift = rng.uniform(0.5, 3.0) * normal / np.linalg.norm(normal)
            anchor = spec.target + shift
            analytic = halfspace_lp_mac(normal, anchor, spec)
            numeric = _numeric_lp_mac(normal, displacement(normal, anchor, spec), spec)
            checks.expect(
                abs(numeric - analytic) <= 1e-7 * max(1.0, analytic),
                f"p={exponent:g} case {case}: closed form {analytic!r}, "
                f"numeric {numeric!r}",
            )


@suite("enclosed-radius")
def check_enclosed_radius(
    rng: np.random.Generator, options: VerifyOptions, checks: _Checks
):
    """The Lp ball of the enclosed radius fits in the unit L1 ball, tightly."""
    for dimension in range(1, 5):
        for exponent in NORM_EXPONENTS[1:]:
            radius = enclosed_lp_radius(dimension, exponent)
            directions = rng.normal(size=(options.samples, dimension))
            norms = np.linalg.norm(directions, ord=exponent, axis=1)
            surface = radius * directions / norms[:, np.newaxis]
            checks.expect_all(
                np.abs(surface).sum(axis=1) <= 1.0 + 1e-9,
                f"D={dimension} p={exponent:g}: sphere leaves the L1 ball",
            )
            diagonal = np.full(dimension, radius * 1.001 / dimension ** (1 / exponent))
            checks.expect(
                float(np.abs(diagonal).sum()) > 1.0,
                f"D={dimension} p={exponent:g}: radius is not tight",
            )


def run_verify(selector: str = "all", options: VerifyOptions | None = None) -> VerifyReport:
    """Run one named suite (or alias), or every suite for ``"all"``."""
    options = options or VerifyOptions()
    selector = SUITE_ALIASES.get(selector, selector)
    if selector == "all":
        names = list(SUITES)
    elif selector in SUITES:
        names = [selector]
    else:
        choices = ", ".join([*SUITES, *SUITE_ALIASES])
        raise InvalidInputError(f"unknown suite {selector!r}; choose from all, {choices}")
    report = VerifyReport()
    for name in names:
        rng = np.random.default_rng([zlib.crc32(name.encode()), options.seed])
        checks = _Checks()
        started = time.perf_counter()
        try:
            SUITES[name](rng, options, checks)
        except EvasionError as error:
            checks.failures.append(f"raised {type(error).__name__}: {error}")
        seconds = time.perf_counter() - started
        passed = not checks.failures
        report.suites.append(SuiteReport(name, passed, checks.count, checks.failures, seconds))
        log.info(
            "Suite %s %s: %d checks in %.1fs",
            name,
            "passed" if passed else "FAILED",
            checks.count,
            seconds,
        )
    return report
