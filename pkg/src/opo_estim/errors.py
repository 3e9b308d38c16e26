"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters, shapes or configuration values."""


class ContractViolation(ValueError):
    """An input breaks a documented precondition (e.g. asymmetric covariance)."""


class NumericalError(RuntimeError):
    """An iterative solver failed to converge or produced non-finite values."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(ArithmeticError):
    """A metric is undefined for the given inputs (zero reference error)."""


class InsufficientDataError(ValueError):
    """Too few samples to compute a statistic."""
