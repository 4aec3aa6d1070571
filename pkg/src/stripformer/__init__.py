"""Strip-attention image deblurring on a small numpy autodiff engine."""

from .errors import (
    CheckpointError,
    ConfigurationError,
    DimensionError,
    InputSizeError,
    NonFiniteError,
    OptimizerError,
    StripformerError,
    TrainingDiverged,
    UsageError,
)
from .estimator import StripformerDeblurrer
from .losses import FeatureExtractor, LossWeights, total_loss
from .model import StripformerConfig, forward, init_params, load_params, save_params
from .tensor import Tensor, backward, no_grad
from .training import Schedule, TrainConfig, adam_step, cosine_lr, train_loop

__version__ = "0.1.0"
