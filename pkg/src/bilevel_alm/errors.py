"""Exception hierarchy shared by every solver layer."""


class BilevelError(Exception):
    """Base class for all errors raised by this package."""


class InputError(BilevelError, ValueError):
    """Bad dimensions, bad configuration values or malformed arguments."""


class EvaluationError(BilevelError, ArithmeticError):
    """A user function produced a non-finite value or a math domain error."""


class LowerSolveError(BilevelError):
    """The lower-level solve did not return a usable solution."""

    def __init__(self, message, x=None, status=None):
        super().__init__(message)
        self.x = x
        self.status = status


class DegenerateError(BilevelError):
    """Strict complementarity fails (a lower-level constraint is biactive)."""


class SingularSystemError(BilevelError):
    """The sensitivity matrix is numerically singular (LICQ or SOSC fails)."""


class DirectionError(BilevelError, ValueError):
    """The search direction is not a descent direction."""


class UnknownProblemError(BilevelError, LookupError):
    """Lookup of an unregistered benchmark name."""

    def __init__(self, name, available):
        self.name = name
        self.available = tuple(available)
        super().__init__(
            f"unknown problem {name!r}; available: {', '.join(self.available)}"
        )


class SolverFailure(BilevelError):
    """Every start of a multistart run failed."""
