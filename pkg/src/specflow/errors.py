"""Exception hierarchy shared by all modules."""


class SpecflowError(Exception):
    """Base class for library errors."""


class ConfigurationError(SpecflowError):
    """Invalid or inconsistent experiment configuration."""


class ValidationError(SpecflowError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(SpecflowError, ArithmeticError):
    """A numerical routine failed (step underflow, ill-conditioning)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class GenerationError(SpecflowError):
    """Dataset generation failed (escape from safety box, too-short trajectories)."""
