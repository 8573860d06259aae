"""Exception hierarchy shared by all pipeline stages.

``ValidationError`` subclasses signal bad inputs (CLI exit code 2);
``NumericalError`` subclasses signal runtime failures such as training
divergence (CLI exit code 3).
"""


class DfcGcnError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DfcGcnError, ValueError):
    pass


class NumericalError(DfcGcnError, RuntimeError):
    pass


class DuplicateId(ValidationError):
    pass


class InconsistentScalars(ValidationError):
    pass


class UnknownLabel(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class InfeasibleSplit(ValidationError):
    pass


class DegenerateSubject(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonFinite(NumericalError):
    """Training produced NaN/Inf. ``history`` holds the epochs completed so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
