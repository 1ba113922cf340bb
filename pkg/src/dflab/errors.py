"""Exception types shared across the package."""


class DflabError(Exception):
    """Base class for package errors."""


class ConfigurationError(DflabError):
    """Invalid configuration: bad dimensions, unknown tags, violated preconditions."""


class ValidationError(DflabError):
    """Input outside its documented range."""


class NumericError(DflabError):
    """Non-finite value where a finite one is required."""


class SolverError(DflabError):
    """An iterative solver failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class IllConditionedProblemError(DflabError):
    """A problem matrix is singular or too ill-conditioned to factor."""


class DataFormatError(DflabError):
    """A data file does not match the documented schema; names the offending row/column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateInstanceError(DflabError):
    """Worst-case regret is (numerically) zero, so normalized regret is undefined."""


class DivergenceError(DflabError):
    """An iterate became non-finite; carries the trace up to the last finite row."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
