"""Exception types shared across the package."""


class TwoStepError(Exception):
    """Base class for package errors."""


class RedundancyError(TwoStepError, ValueError):
    """Raised when the asset panel (or regression design) is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class NonConvergenceError(TwoStepError, RuntimeError):
    """Raised when an iterative solver or training loop fails to converge."""

    def __init__(self, message, period=None):
        super().__init__(message)
        self.period = period


class ConfigError(TwoStepError, ValueError):
    """Raised for invalid run configurations."""
