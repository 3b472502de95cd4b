"""Exceptions raised by the geometry, oracle and search layers."""


class EvasionError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(EvasionError, ValueError):
    """An argument violates an operation's precondition."""


class DegenerateSubgradientError(InvalidInputError):
    """A subgradient was requested at the target point itself."""


class ParameterRangeError(InvalidInputError):
    """The requested accuracy is outside the range the method can certify."""


class EmptyDirectionSetError(InvalidInputError):
    """No usable search direction remains."""


class InconsistentOracleError(EvasionError):
    """The oracle contradicted a label the search relies on."""


class SearchExhaustedError(EvasionError):
    """A bounded search ran out of levels, grid points or samples."""


class QueryBudgetExceeded(SearchExhaustedError):
    """The oracle refused a query beyond its configured budget."""


class DegenerateBodyError(EvasionError):
    """The feasible body is too thin to sample from."""


class NotAvailableError(EvasionError):
    """No closed form exists for the requested quantity."""


class UnsoundBoundError(EvasionError):
    """A witness cheaper than the lower bound proved that bound wrong."""

    def __init__(self, message: str, witness=None) -> None:
        super().__init__(message)
        self.witness = witness
