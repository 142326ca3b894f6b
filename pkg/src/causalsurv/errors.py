"""Exception types shared across the package."""


class CausalSurvError(Exception):
    """Base class for library errors."""


class SchemaError(CausalSurvError, ValueError):
    """A required CSV column is missing."""


class ParseError(CausalSurvError, ValueError):
    """A CSV cell could not be parsed or violates its domain."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DegenerateGridError(CausalSurvError, ValueError):
    pass


class FitError(CausalSurvError, RuntimeError):
    """Model fitting cannot proceed (single arm, no complete cases, ...)."""


class NotIdentifiedError(FitError):
    """The estimating equation has a zero denominator."""


class NoOOBError(CausalSurvError, RuntimeError):
    """No tree excludes the requested training sample."""


class ScoringError(CausalSurvError, RuntimeError):
    pass


class CIUnavailableError(CausalSurvError, RuntimeError):
    """Variance estimation needs at least two little bags."""


class SingularDesignError(CausalSurvError, ValueError):
    """The projection design matrix is rank deficient."""
