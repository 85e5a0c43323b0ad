"""
Exception families shared by every strokebench app.

Domain modules subclass these next to the code that raises them.
"""


class StrokeBenchError(Exception):
    """Base class for all domain errors; the CLI maps it to exit code 1."""
    pass


class DimensionError(StrokeBenchError, ValueError):
    """Exception raised when tensor shapes do not line up."""
    pass


class DTypeError(StrokeBenchError, TypeError):
    """Exception raised when tensors of different dtypes are combined."""
    pass


class ConfigurationError(StrokeBenchError, ValueError):
    """Exception raised for invalid hyperparameters or architecture settings."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class StateError(StrokeBenchError, RuntimeError):
    """Exception raised when an operation runs in the wrong lifecycle state."""
    pass


class NumericError(StrokeBenchError, ArithmeticError):
    """Exception raised for non-finite values."""
    pass


class TargetIndexError(StrokeBenchError, IndexError):
    """Exception raised when a class index falls outside [0, N)."""
    pass
