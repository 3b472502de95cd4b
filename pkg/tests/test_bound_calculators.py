"""Tests for the closed-form radii, covering numbers and query bounds."""

import math

import pytest

from convex_evasion.core.errors import InvalidInputError, ParameterRangeError
from convex_evasion.geometry.bounds import (
    binary_entropy,
    cap_covering_bound,
    default_kmls_steps,
    enclosed_lp_radius,
    hypercube_covering_bound,
    kmls_query_ceiling,
    l2_query_lower_bound,
    lp_query_lower_bound,
    mls_query_ceiling,
    multiline_epsilon_threshold,
)


@pytest.mark.parametrize(
    ("dimension", "exponent", "expected"),
    [(4, 2.0, 0.5), (5, math.inf, 0.2), (7, 1.0, 1.0), (1, 3.0, 1.0)],
)
def test_enclosed_lp_radius(dimension, exponent, expected):
    """Shrink the enclosed Lp ball as D^((1 - p) / p)."""
    assert enclosed_lp_radius(dimension, exponent) == pytest.approx(expected)


def test_enclosed_lp_radius_requires_p_at_least_one():
    """Refuse p < 1, where the L1 ball sits inside the Lp ball instead."""
    with pytest.raises(InvalidInputError):
        enclosed_lp_radius(3, 0.5)


@pytest.mark.parametrize(
    ("dimension", "exponent", "expected"),
    [(4, 2.0, 1.0), (2, 2.0, math.sqrt(2) - 1), (3, 1.0, 0.0), (3, 0.5, 0.0)],
)
def test_multiline_epsilon_threshold(dimension, exponent, expected):
    """Report the smallest reachable epsilon, zero for p <= 1."""
    assert multiline_epsilon_threshold(dimension, exponent) == pytest.approx(expected)


def test_hypercube_covering_bound_example():
    """Evaluate 2^(D(1 - H(δ))) at D = 10, δ = 0.3."""
    assert hypercube_covering_bound(10, 0.3) == pytest.approx(2.2769, rel=1e-3)


def test_hypercube_covering_bound_limits():
    """Approach 2^D as δ → 0 and 1 as δ → 1/2."""
    assert hypercube_covering_bound(10, 1e-9) == pytest.approx(2.0**10, rel=1e-3)
    assert hypercube_covering_bound(10, 0.5 - 1e-9) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("delta", [0.0, 0.5, -0.1])
def test_hypercube_covering_bound_range(delta):
    """Accept only δ strictly inside (0, 1/2)."""
    with pytest.raises(InvalidInputError):
        hypercube_covering_bound(4, delta)


@pytest.mark.parametrize(
    ("dimension", "angle", "expected"),
    [(6, math.pi / 2, 1.0), (2, 0.1, 1.0), (4, math.pi / 6, 4.0)],
)
def test_cap_covering_bound(dimension, angle, expected):
    """Count caps as sin(φ)^-(D-2)."""
    assert cap_covering_bound(dimension, angle) == pytest.approx(expected)


def test_l2_query_lower_bound():
    """Grow as α^((D-2)/2) with α = (1+ε)² / ((1+ε)² - 1)."""
    assert l2_query_lower_bound(4, 1.0) == pytest.approx(4 / 3)
    assert l2_query_lower_bound(2, 0.25) == pytest.approx(1.0)


def test_lp_query_lower_bound_for_infinity_norm():
    """Use δ = ε/(1+ε) as the covering radius for p = ∞."""
    expected = 2.0 ** (1.0 - binary_entropy(0.25))
    assert lp_query_lower_bound(1, math.inf, 1 / 3) == pytest.approx(expected)
    assert lp_query_lower_bound(3, math.inf, 1 / 3) == pytest.approx(expected**3)


def test_lp_query_lower_bound_flattens_at_the_limit():
    """Tend to 1 as ε approaches the top of its valid range."""
    limit = math.sqrt(2) - 1
    assert lp_query_lower_bound(1, 2.0, limit - 1e-9) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize(
    ("exponent", "epsilon"), [(math.inf, 1.0), (2.0, 0.5), (3.0, 0.7)]
)
def test_lp_query_lower_bound_out_of_range(exponent, epsilon):
    """Name the range limit when the bound no longer applies."""
    with pytest.raises(ParameterRangeError):
        lp_query_lower_bound(4, exponent, epsilon)


def test_lp_query_lower_bound_requires_p_above_one():
    """Refuse p = 1, which has no exponential lower bound."""
    with pytest.raises(InvalidInputError):
        lp_query_lower_bound(4, 1.0, 0.1)


def test_query_ceilings():
    """Evaluate |W|·L + |W| and L + (2⌈√L⌉ + 1)·|W|."""
    assert mls_query_ceiling(4, 3) == 16.0
    assert kmls_query_ceiling(4, 9) == 37.0
    assert kmls_query_ceiling(4, 10) == 10 + 9 * 4


@pytest.mark.parametrize(("steps", "expected"), [(0, 1), (1, 1), (9, 3), (10, 4)])
def test_default_kmls_steps(steps, expected):
    """Use K = ⌈√L⌉ with at least one step."""
    assert default_kmls_steps(steps) == expected
