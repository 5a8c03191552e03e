"""Exception types shared across the package."""


class GPSError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(GPSError, ValueError):
    """A kernel or free-end configuration cannot define a valid law."""


class OutOfDomainError(GPSError, ValueError):
    """An argument lies outside the domain of the requested quantity."""


class StaleTiltError(GPSError, ValueError):
    """The supplied tilt parameter does not solve the normalization equation."""


class NonCramerSignal(GPSError):
    """The slope lies outside the open Cramér window; use N(h) instead."""


class EmptyKernelError(GPSError, ValueError):
    pass


class UnreachableTargetError(GPSError):
    """The requested endpoint has zero partition-function weight."""


class InconsistencyError(GPSError, ArithmeticError):
    pass


class SpecInfeasibleError(GPSError):
    """Event-sequence orderings fail at this N (too small for the asymptotic regime)."""


class WrongBranchError(GPSError):
    """A formula was requested outside the parameter branch where it applies."""
