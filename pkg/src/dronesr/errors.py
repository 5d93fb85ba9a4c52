"""Exception types shared across the toolkit."""


class DroneSRError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(DroneSRError):
    """Arguments violate an operation's preconditions."""


class EstimationFailureError(DroneSRError):
    """Model fitting failed (degenerate configuration, no consensus)."""


class RegistrationFailureError(DroneSRError):
    """FOV matching failed; carries diagnostics in args."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UndefinedCorrelationError(DroneSRError):
    """Correlation undefined (zero variance input)."""


class PointAtInfinityError(DroneSRError):
    """Projective mapping sent a point to infinity (w ~ 0)."""
