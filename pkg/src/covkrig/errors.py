"""Exception types shared across the package."""


class CovkrigError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CovkrigError):
    """Invalid configuration: bad distribution/space pairing, bad config file, ..."""


class NumericError(CovkrigError):
    """A numeric routine failed (non-finite input, eigendecomposition failure, ...)."""


class IllConditionedError(NumericError):
    """Cholesky factorization failed even after jitter."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class FitError(NumericError):
    """Hyperparameter search produced no usable candidate."""


class RegressorError(CovkrigError):
    """The regression design matrix is rank deficient."""


class InsufficientReplicationsError(CovkrigError):
    """Fewer than two replications at some covariate point."""


class UnsupportedProblemError(CovkrigError):
    """An operation needs a truth oracle the problem does not expose."""


class NoConvergenceError(CovkrigError):
    """Log-log regression slope is nonnegative; the target precision is unreachable."""
