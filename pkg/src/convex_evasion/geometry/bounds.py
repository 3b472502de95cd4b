"""Closed-form radii, covering numbers and query-complexity bounds.

All calculators return floats; callers round as they need.
"""

import math

from scipy.stats import entropy

from convex_evasion.core.errors import InvalidInputError, ParameterRangeError


def _check_dimension(dimension: int, minimum: int = 1) -> None:
    if dimension < minimum:
        raise InvalidInputError(f"dimension must be at least {minimum}")


def _check_epsilon(epsilon: float) -> None:
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")


def binary_entropy(delta: float) -> float:
    """H(δ) in bits."""
    return float(entropy([delta, 1.0 - delta], base=2))


def enclosed_lp_radius(dimension: int, exponent: float) -> float:
    """Radius of the largest unit-weight Lp ball inside the unit L1 ball."""
    _check_dimension(dimension)
    if exponent < 1:
        raise InvalidInputError("enclosed radius is defined for p >= 1")
    if math.isinf(exponent):
        return 1.0 / dimension
    return dimension ** ((1.0 - exponent) / exponent)


def multiline_epsilon_threshold(dimension: int, exponent: float) -> float:
    """Smallest ε reachable by axis-direction multiline search under an Lp cost.

    Below 1 the axis directions certify the Lp ball itself and any ε works.
    """
    if 0 < exponent <= 1:
        return 0.0
    return 1.0 / enclosed_lp_radius(dimension, exponent) - 1.0


def hypercube_covering_bound(dimension: int, delta: float) -> float:
    """Lower bound ``2^(D(1 - H(δ)))`` on hypercube covering numbers."""
    _check_dimension(dimension)
    if not 0 < delta < 0.5:
        raise InvalidInputError("delta must lie in (0, 1/2)")
    return 2.0 ** (dimension * (1.0 - binary_entropy(delta)))


def cap_covering_bound(dimension: int, angle: float) -> float:
    """Caps of half-angle φ needed to cover the sphere: ``sin(φ)^-(D-2)``."""
    _check_dimension(dimension, minimum=2)
    if not 0 < angle <= math.pi / 2:
        raise InvalidInputError("angle must lie in (0, pi/2]")
    return (1.0 / math.sin(angle)) ** (dimension - 2)


def l2_query_lower_bound(dimension: int, epsilon: float) -> float:
    """Worst-case queries of any multiline search for L2 costs."""
    _check_dimension(dimension, minimum=2)
    _check_epsilon(epsilon)
    scale = (1.0 + epsilon) ** 2
    alpha = scale / (scale - 1.0)
    return alpha ** ((dimension - 2) / 2.0)


def lp_query_lower_bound(dimension: int, exponent: float, epsilon: float) -> float:
    """``α^D`` lower bound for weighted Lp costs with 1 < p <= ∞.

    Outside the ε range where the bound is exponential the adversary has
    nothing to show, and a ParameterRangeError names the limit.
    """
    _check_dimension(dimension)
    _check_epsilon(epsilon)
    if math.isinf(exponent):
        if epsilon >= 1:
            raise ParameterRangeError("p = inf requires epsilon < 1")
        delta = epsilon / (1.0 + epsilon)
    elif exponent > 1:
        limit = 2.0 ** ((exponent - 1.0) / exponent) - 1.0
        if epsilon >= limit:
            raise ParameterRangeError(f"p = {exponent} requires epsilon < {limit}")
        grown = (1.0 + epsilon) ** (exponent / (exponent - 1.0))
        delta = (grown - 1.0) / grown
    else:
        raise InvalidInputError("lp_query_lower_bound requires p > 1")
    alpha = 2.0 ** (1.0 - binary_entropy(delta))
    return alpha**dimension


def _ceil_sqrt(value: int) -> int:
    return math.isqrt(value - 1) + 1 if value > 0 else 0


def mls_query_ceiling(directions: int, steps: int) -> float:
    """Multiline search ceiling ``|W|·L + |W|``."""
    return float(directions * steps + directions)


def default_kmls_steps(steps: int) -> int:
    """K = ⌈√L⌉, at least one."""
    return max(1, _ceil_sqrt(steps))


def kmls_query_ceiling(directions: int, steps: int) -> float:
    """K-step multiline ceiling ``L + (2⌈√L⌉ + 1)·|W|``."""
    return float(steps + (2 * _ceil_sqrt(steps) + 1) * directions)
