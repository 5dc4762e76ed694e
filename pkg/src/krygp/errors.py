"""Exception types shared across the package."""


class KrygpError(Exception):
    """Base class for all package errors."""


class ContractViolation(KrygpError, ValueError):
    """An argument violates a documented precondition."""


class DimensionMismatch(ContractViolation):
    """Array shapes are inconsistent with the operator or data."""


class CapacityError(KrygpError):
    """A dense materialization was requested above the configured cap."""


class NumericalBreakdown(KrygpError):
    """An algorithm hit a numerically invalid state (negative pivot,
    singular inner system, nonpositive Ritz value)."""


class NumericalDivergence(KrygpError):
    """An iterative solve produced NaN/Inf residuals."""


class NotPositiveDefinite(KrygpError):
    """Dense Cholesky failed even after jitter escalation."""


class IngestionError(KrygpError):
    """A data file could not be parsed into a usable dataset."""
