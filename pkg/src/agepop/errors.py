"""Exception types raised across the package."""


class AgepopError(Exception):
    """Base class for all package errors."""


class InvalidArgument(AgepopError, ValueError):
    pass


class InvalidState(AgepopError):
    """An operation was applied to a state in the wrong units."""


class NotApplicable(AgepopError):
    """A diagnostic is undefined for the given parameters."""


class FactorizationFailed(AgepopError, ArithmeticError):
    def __init__(self, tau, theta, detail=""):
        self.tau = tau
        self.theta = theta
        msg = f"stepping matrix is singular for tau={tau!r}, theta={theta!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ParseError(AgepopError):
    def __init__(self, path, row, message):
        self.path = path
        self.row = row
        where = f"{path}" if row is None else f"{path}:{row}"
        super().__init__(f"{where}: {message}")


class ExtrapolationError(AgepopError, ValueError):
    pass


class StabilityWarning(UserWarning):
    """The time step lies outside the sufficient stability window."""
