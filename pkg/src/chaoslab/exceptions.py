"""Exception hierarchy shared by every chaoslab module."""


class ChaosLabError(Exception):
    """Base class for all chaoslab errors."""


class DomainError(ChaosLabError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigurationError(ChaosLabError, ValueError):
    """Invalid configuration, shapes, or preconditions."""


class DivergenceError(ChaosLabError, ArithmeticError):
    """A simulation or training run left the finite/bounded region.

    ``step`` is the integration step (or epoch) at which the guard fired and
    ``partial`` optionally carries whatever was recorded before the abort.
    """

    def __init__(self, message, step=None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


class InsufficientDataError(ChaosLabError, ValueError):
    """Not enough samples for the requested analysis."""
