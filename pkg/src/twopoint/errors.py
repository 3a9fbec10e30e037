"""Exception types shared across the package."""


class TwoPointError(Exception):
    """Base class for all package errors."""


class StructureError(TwoPointError, ValueError):
    """Inconsistent array shapes in problem data."""


class DomainError(TwoPointError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class CapabilityError(TwoPointError, NotImplementedError):
    """The requested risk measure or structure is not supported by an operation."""


class SolverError(TwoPointError, RuntimeError):
    """The conic backend failed to certify a solution."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DataError(TwoPointError, ValueError):
    """Input data is malformed or insufficient."""
