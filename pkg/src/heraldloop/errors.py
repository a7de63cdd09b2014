"""Exception hierarchy shared by all modules."""


class HeraldError(Exception):
    """Base class for every error raised by heraldloop."""

    exit_code = 1


class InvalidArgument(HeraldError, ValueError):
    exit_code = 2


class NumericalFailure(HeraldError, ArithmeticError):
    exit_code = 3


class DivergentTrace(NumericalFailure):
    """A term E(x) with x >= 1 was traced."""


class NonPhysicalMixture(NumericalFailure):
    """Trace of a mixture is not positive (impossible pattern or cancellation)."""


class CutoffExceeded(NumericalFailure):
    """Fock-space cutoff ceiling reached before the tail mass became negligible."""


class FitFailure(NumericalFailure):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientData(HeraldError, ValueError):
    exit_code = 4
