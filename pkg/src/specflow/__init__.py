"""Kernel learning of flows and vector fields from variable-step multistep windows."""

from .errors import ConfigurationError, GenerationError, NumericalError, SpecflowError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "SpecflowError",
    "ConfigurationError",
    "ValidationError",
    "NumericalError",
    "GenerationError",
]
