"""Exception types raised across the package."""


class ModerateIPSError(Exception):
    """Base class for all package errors."""


class ZeroPoint(ModerateIPSError, ValueError):
    pass


class DimensionMismatch(ModerateIPSError, ValueError):
    pass


class InvalidExponents(ModerateIPSError, ValueError):
    pass


class InvalidAlpha(ModerateIPSError, ValueError):
    pass


class InvalidZeta(ModerateIPSError, ValueError):
    pass


class InsufficientPoints(ModerateIPSError, ValueError):
    pass


class QuadratureFailure(ModerateIPSError, RuntimeError):
    pass


class TailTruncationError(ModerateIPSError, RuntimeError):
    pass


class BoxTooSmall(ModerateIPSError, ValueError):
    pass


class OutOfTable(ModerateIPSError, ValueError):
    pass


class ResolutionError(ModerateIPSError, ValueError):
    pass


class MassLeak(ModerateIPSError, RuntimeError):
    pass


class NonFinite(ModerateIPSError, FloatingPointError):
    pass


class BlowUp(ModerateIPSError, RuntimeError):
    """Sup-norm guard tripped; ``time`` records when."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class QuadratureTooCoarse(ModerateIPSError, RuntimeError):
    pass


class SimulationError(ModerateIPSError, RuntimeError):
    """Wraps a failure inside a time loop with the step index attached."""

    def __init__(self, message, step=None, cause=None):
        super().__init__(message)
        self.step = step
        self.cause = cause
