"""Exception hierarchy shared by every module of the package."""


class SpinQSTError(Exception):
    """Base class for all errors raised by spin_qst."""


class InvalidStateError(SpinQSTError, ValueError):
    """A state or Bloch vector violates its norm / size invariants."""


class DimensionMismatchError(SpinQSTError, ValueError):
    """Operands live in Hilbert spaces of different dimension."""


class ConfigError(SpinQSTError, ValueError):
    """Inconsistent configuration (time grid, waveform alignment, counts...)."""


class IntegrationInstabilityError(SpinQSTError, ArithmeticError):
    """A filter propagation collapsed or produced non-finite values.

    Raised by the CSE and SCS propagators. Callers scoring candidates turn it
    into an invalid likelihood value instead of a number.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class StepSizeError(IntegrationInstabilityError):
    """Truth generation detected a time step too coarse for the dynamics."""


class AllCandidatesInvalidError(SpinQSTError):
    """Every candidate of an estimator stage failed to propagate."""
