"""Exception types raised across the package."""


class XtreatError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(XtreatError, ValueError):
    pass


class DegenerateDataError(XtreatError, ValueError):
    pass


class SupportViolationError(XtreatError, ValueError):
    pass


class DomainError(XtreatError, ArithmeticError):
    """Special-function overflow at the requested parameters."""


class InsufficientDataError(XtreatError, ValueError):
    pass


class TrainingDivergedError(XtreatError, RuntimeError):
    """Training produced a non-finite loss.

    The last finite weight vector is kept on ``last_stable_weights``.
    """

    def __init__(self, message, last_stable_weights=None):
        super().__init__(message)
        self.last_stable_weights = last_stable_weights


class GradientCheckError(XtreatError, RuntimeError):
    pass


class ParseError(XtreatError, ValueError):
    """CSV/config parse failure with a location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column
