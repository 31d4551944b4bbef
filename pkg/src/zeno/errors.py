"""Exception hierarchy shared by every module."""


class ZenoError(Exception):
    """Base class for all library errors."""


class ValidationError(ZenoError, ValueError):
    """An input violates a documented precondition or invariant."""


class ConfigError(ZenoError, ValueError):
    """Inconsistent configuration: mismatched dimensions, unknown labels."""


class ParseError(ZenoError, ValueError):
    """A scenario document is malformed (unknown or missing keys, bad types)."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class NumericsError(ZenoError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message, achieved=None):
        self.achieved = achieved
        if achieved is not None:
            message = f"{message} (achieved error estimate {achieved:.3e})"
        super().__init__(message)


class AssumptionError(ZenoError):
    """A model does not satisfy an assumption required by a reduced formula."""


class InconclusiveError(ZenoError):
    """A verification could not produce a meaningful answer."""


class PerturbativeWarning(UserWarning):
    """Total jump probability per cycle is too large for second order to be trusted."""
