"""Exception hierarchy shared across the package."""


class StripformerError(Exception):
    """Base class for all package errors."""


class DimensionError(StripformerError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(StripformerError, ValueError):
    """A hyperparameter or layer configuration is invalid."""


class InputSizeError(StripformerError, ValueError):
    """An image has spatial extents the network cannot process directly."""


class NonFiniteError(StripformerError, ArithmeticError):
    """A NaN or Inf appeared while STRICT_FINITE checking is enabled."""


class UsageError(StripformerError, RuntimeError):
    """An API was called in an invalid state or with invalid arguments."""


class CheckpointError(StripformerError):
    """A checkpoint file is malformed or does not match the expected model."""


class OptimizerError(StripformerError):
    """The optimizer cannot apply an update."""


class TrainingDiverged(StripformerError):
    """The training loss became non-finite.

    ``checkpoint`` holds the path of the last-good parameters, if one was written.
    """

    def __init__(self, message, step=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint
