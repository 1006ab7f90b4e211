"""Exception hierarchy shared across the package."""


class KopiError(Exception):
    """Base class for all package errors."""


class ConfigError(KopiError):
    """Malformed or inconsistent configuration input."""


class InvalidParameterError(KopiError):
    """Parameter outside its documented domain."""


class DegenerateSupportError(InvalidParameterError):
    """Requested sparsity yields an empty support."""


class DegenerateSignalError(InvalidParameterError):
    """Signal vector X @ beta is identically zero."""


class InvalidInputError(KopiError):
    """Input array violates a value-domain precondition."""


class DataFormatError(KopiError):
    """Dataset file cannot be parsed; carries row/column location when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalConditioningError(KopiError):
    """Matrix too ill-conditioned for the requested factorization."""


class NonConvergenceError(KopiError):
    """Iterative solver hit its iteration cap; carries the residual violation."""

    def __init__(self, message, violation):
        super().__init__(message)
        self.violation = violation


class CacheMismatchError(KopiError):
    """Cache file header does not match the requested key."""
