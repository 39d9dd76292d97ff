"""Exception hierarchy shared by every module."""


class OscillodeError(Exception):
    """Base class for all errors raised by oscillode."""

    exit_code = 3


class DomainError(OscillodeError, ValueError):
    """Input outside the domain of an operation (non-finite state, bad eps...)."""

    exit_code = 2


class ConvergenceError(OscillodeError):
    """Fixed-point iteration of an implicit step did not converge."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StiffnessError(OscillodeError):
    """Adaptive step size fell below the underflow threshold."""


class SingularityError(OscillodeError):
    """Near-singular matrix met during elimination."""


class UnsupportedOrderError(OscillodeError, ValueError):
    exit_code = 2


class ModeError(OscillodeError, ValueError):
    """Structured networks used in the wrong mode (classical vs autonomous)."""

    exit_code = 2


class NumericalError(OscillodeError):
    """Non-finite values appeared during training or integration."""


class FormatError(OscillodeError):
    """Malformed or incompatible file on disk."""

    exit_code = 4

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(OscillodeError, ValueError):
    """Configuration failed validation; carries every violation found."""

    exit_code = 2

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
