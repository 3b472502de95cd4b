"""Unit and property tests for weighted costs, cost balls and halfspaces."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from convex_evasion.core.errors import DegenerateSubgradientError, InvalidInputError
from convex_evasion.geometry.cost import (
    BoundMode,
    BoundPair,
    CostBall,
    CostSpec,
    Halfspace,
    evaluate_cost,
    evaluate_costs,
    halfspace_lp_mac,
    halfspace_lp_minimizer,
    l1_ball_vertices,
    steps_for_gap,
    subgradient_halfspace,
)

coordinates = st.floats(min_value=-100, max_value=100, allow_nan=False)
exponents = st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf])


def vectors(dimension: int):
    return arrays(np.float64, dimension, elements=coordinates)


@pytest.mark.parametrize(
    ("weights", "exponent", "delta", "expected"),
    [
        ((1, 1), 1, (3, -4), 7.0),
        ((1, 1), 2, (3, 4), 5.0),
        ((2, 1), 1, (3, 4), 10.0),
        ((1, 3), math.inf, (2, -1), 3.0),
    ],
)
def test_evaluate_cost_examples(weights, exponent, delta, expected):
    """Weight each coordinate's displacement and combine them with the Lp norm."""
    spec = CostSpec(target=[1.0, -2.0], weights=weights, exponent=exponent)
    assert evaluate_cost(spec.target + np.array(delta), spec) == pytest.approx(expected)


def test_target_costs_nothing(l1_plane):
    """Charge nothing for leaving the target untouched."""
    assert evaluate_cost(l1_plane.target, l1_plane) == 0.0


def test_untouched_immutable_coordinate_is_free():
    """Treat an infinite weight as free when the coordinate does not move."""
    spec = CostSpec(target=[0.0, 0.0], weights=[1.0, math.inf])
    assert evaluate_cost([2.0, 0.0], spec) == 2.0
    assert math.isinf(evaluate_cost([2.0, 1.0], spec))


@pytest.mark.parametrize("point", [[math.nan, 0.0], [math.inf, 1.0], [1.0]])
def test_evaluate_cost_rejects_bad_points(l1_plane, point):
    """Refuse non-finite coordinates and points of the wrong dimension."""
    with pytest.raises(InvalidInputError):
        evaluate_cost(point, l1_plane)


@pytest.mark.parametrize(
    ("target", "weights", "exponent"),
    [
        ([0.0, 0.0], [1.0, -1.0], 1.0),
        ([0.0, 0.0], [1.0, math.nan], 1.0),
        ([0.0, math.inf], [1.0, 1.0], 1.0),
        ([0.0, 0.0], [1.0, 1.0], 0.0),
        ([0.0, 0.0], [1.0], 1.0),
    ],
)
def test_cost_spec_validation(target, weights, exponent):
    """Reject negative or missing weights, infinite targets and p <= 0."""
    with pytest.raises(InvalidInputError):
        CostSpec(target=target, weights=weights, exponent=exponent)


def test_vectorised_costs_match_scalar_costs(rng):
    """Agree row by row with the scalar evaluation."""
    spec = CostSpec(target=[0.5, -1.0, 2.0], weights=[0.5, 2.0, 1.0], exponent=3.0)
    points = rng.normal(size=(50, 3))
    expected = [evaluate_cost(point, spec) for point in points]
    assert evaluate_costs(points, spec) == pytest.approx(expected)


@given(vectors(3), st.floats(min_value=-10, max_value=10), exponents)
def test_cost_is_absolutely_homogeneous(delta, scale, exponent):
    """Scale the cost by |a| when the displacement is scaled by a."""
    spec = CostSpec(target=[1.0, 2.0, 3.0], weights=[0.5, 1.0, 4.0], exponent=exponent)
    scaled = evaluate_cost(spec.target + scale * delta, spec)
    assert scaled == pytest.approx(abs(scale) * spec.norm(delta), rel=1e-9, abs=1e-9)


@given(vectors(3), vectors(3), exponents)
def test_cost_satisfies_the_triangle_inequality(first, second, exponent):
    """Never charge more for a sum of moves than for the moves separately."""
    spec = CostSpec(target=[0.0, 0.0, 0.0], weights=[0.5, 1.0, 4.0], exponent=exponent)
    combined = spec.norm(first + second)
    assert combined <= (spec.norm(first) + spec.norm(second)) * (1 + 1e-12) + 1e-9


def test_l1_ball_vertices_are_ordered_by_axis():
    """List the vertices target ± (C / c_d) e_d as +1, -1, +2, -2."""
    spec = CostSpec(target=[0.0, 0.0], weights=[1.0, 2.0])
    vertices = l1_ball_vertices(2.0, spec)
    np.testing.assert_allclose(vertices, [[2, 0], [-2, 0], [0, 1], [0, -1]])


def test_l1_ball_vertices_in_one_dimension():
    """Offset the two vertices from the target."""
    spec = CostSpec(target=[3.0], weights=[1.0])
    np.testing.assert_allclose(l1_ball_vertices(5.0, spec), [[8.0], [-2.0]])


@pytest.mark.parametrize(
    ("cost", "spec"),
    [
        (0.0, CostSpec.unweighted(2)),
        (1.0, CostSpec.unweighted(2, exponent=2.0)),
        (1.0, CostSpec(target=[0.0, 0.0], weights=[1.0, 0.0])),
    ],
)
def test_l1_ball_vertices_preconditions(cost, spec):
    """Require a positive cost, p = 1 and regular weights."""
    with pytest.raises(InvalidInputError):
        l1_ball_vertices(cost, spec)


@pytest.mark.parametrize(
    ("bounds", "accuracy", "expected"),
    [
        (BoundPair(1.0, 16.0), 1.0, 2),
        (BoundPair(0.0, 8.0, BoundMode.ADDITIVE), 1.0, 3),
        (BoundPair(1.0, 4.0), 3.0, 0),
        (BoundPair(2.0, 2.0 * 2.0**32), 0.01, 12),
    ],
)
def test_steps_for_gap(bounds, accuracy, expected):
    """Count the bisections needed to bring the gap within the accuracy."""
    assert steps_for_gap(bounds, accuracy) == expected


def test_multiplicative_bounds_need_a_positive_lower_bound():
    """Reject a zero lower bound in multiplicative mode only."""
    with pytest.raises(InvalidInputError):
        BoundPair(0.0, 4.0)
    assert BoundPair(0.0, 4.0, BoundMode.ADDITIVE).gap == 4.0


def test_proposals_use_the_mode_mean():
    """Propose the geometric mean, or the arithmetic mean in additive mode."""
    assert BoundPair(1.0, 16.0).proposal() == pytest.approx(4.0)
    assert BoundPair(1.0, 16.0, BoundMode.ADDITIVE).proposal() == 8.5


def test_geometric_proposal_survives_huge_gaps():
    """Keep the proposal finite at gaps far beyond float range when squared."""
    proposal = BoundPair(1e-300, 1e300).proposal()
    assert proposal == pytest.approx(1.0)


def test_subgradient_halfspace_for_l1():
    """Follow the sign pattern of y for p = 1."""
    cut = subgradient_halfspace([2.0, -3.0], CostSpec.unweighted(2))
    np.testing.assert_allclose(cut.normal, [1.0, -1.0])
    assert cut.offset == pytest.approx(5.0)


def test_subgradient_halfspace_for_l2():
    """Use the unit gradient of the Euclidean norm for p = 2."""
    cut = subgradient_halfspace([3.0, 4.0], CostSpec.unweighted(2, exponent=2.0))
    np.testing.assert_allclose(cut.normal, [0.6, 0.8])
    assert cut.offset == pytest.approx(5.0)


def test_subgradient_at_the_target_is_degenerate(l1_plane):
    """Refuse to cut at the target, where the cost has no direction."""
    with pytest.raises(DegenerateSubgradientError):
        subgradient_halfspace([0.0, 0.0], l1_plane)


@settings(max_examples=50)
@given(vectors(3), exponents, st.integers(min_value=0, max_value=2**32 - 1))
def test_subgradient_halfspace_keeps_cheaper_points(y, exponent, seed):
    """Contain every point whose cost does not exceed that of y."""
    spec = CostSpec(target=[0.0, 1.0, -1.0], weights=[1.0, 0.5, 2.0], exponent=exponent)
    point = spec.target + y
    if not np.any(y):
        return
    cut = subgradient_halfspace(point, spec)
    generator = np.random.default_rng(seed)
    directions = generator.normal(size=(200, 3))
    norms = evaluate_costs(spec.target + directions, spec)
    radii = generator.uniform(0, 1, size=200) * spec.cost(point) / norms
    cheaper = spec.target + radii[:, np.newaxis] * directions
    slack = 1e-9 * (abs(cut.offset) + np.abs(cheaper) @ np.abs(cut.normal))
    assert np.all(cheaper @ cut.normal <= cut.offset + slack)


@pytest.mark.parametrize(
    ("normal", "anchor", "exponent", "expected"),
    [
        ((1, 1), (1, 1), 2.0, math.sqrt(2)),
        ((1, 1), (-0.5, -0.5), 2.0, 0.0),
        ((1, 1, 1), (1, 1, 1), math.inf, 1.0),
        ((1, 0), (2, 0), 1.0, 2.0),
    ],
)
def test_halfspace_lp_mac(normal, anchor, exponent, expected):
    """Divide the displacement by the dual norm of the normal."""
    spec = CostSpec.unweighted(len(normal), exponent=exponent)
    assert halfspace_lp_mac(normal, anchor, spec) == pytest.approx(expected)


@pytest.mark.parametrize("exponent", [1.0, 1.5, 2.0, 3.0, math.inf])
def test_halfspace_minimizer_attains_the_mac(exponent):
    """Place the minimiser on the boundary at exactly the closed-form cost."""
    spec = CostSpec(target=[1.0, -1.0, 0.5], weights=[2.0, 0.5, 1.0], exponent=exponent)
    normal = np.array([0.3, -1.2, 0.7])
    anchor = spec.target + 1.7 * normal
    minimizer = halfspace_lp_minimizer(normal, anchor, spec)
    assert minimizer @ normal == pytest.approx(anchor @ normal)
    assert evaluate_cost(minimizer, spec) == pytest.approx(
        halfspace_lp_mac(normal, anchor, spec)
    )


def test_halfspace_mac_ignores_immutable_coordinates():
    """Reach the halfspace through the mutable coordinates alone."""
    spec = CostSpec(target=[0.0, 0.0], weights=[1.0, math.inf], exponent=2.0)
    assert halfspace_lp_mac([1.0, 1.0], [1.0, 1.0], spec) == pytest.approx(2.0)


def test_halfspace_mac_is_zero_through_a_free_coordinate():
    """Cost nothing when a zero-weight coordinate can cross the boundary."""
    spec = CostSpec(target=[0.0, 0.0], weights=[1.0, 0.0])
    assert halfspace_lp_mac([1.0, 1.0], [1.0, 1.0], spec) == 0.0


def test_cost_ball_and_halfspace_membership(l1_plane):
    """Treat both sets as closed, up to rounding at the boundary."""
    ball = CostBall(l1_plane, 2.0)
    assert ball.contains([1.0, 1.0])
    assert not ball.contains([1.0, 1.1])
    cut = Halfspace([1.0, 0.0], 2.0)
    assert cut.contains([2.0, 5.0])
    assert not cut.contains([2.1, 0.0])
