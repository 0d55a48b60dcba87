"""Neural backward solver for optimal switching under jump diffusions."""
from ._backend import kernel as _kernel
from .errors import FormatError, TrainingError, ValidationError

__version__ = "0.1.0"
BACKEND = _kernel.NAME

__all__ = ["FormatError", "TrainingError", "ValidationError", "BACKEND", "__version__"]
