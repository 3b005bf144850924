"""Tensor arithmetic, reverse-mode autodiff, layers and optimizers."""

from .layers import (
    LSTM,
    Activation,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Embedding,
    Flatten,
    Layer,
    Sequential,
    ShapeError,
    SpectralNorm,
    dropout_mask,
    forward,
    power_iteration,
    recurrent_cell_step,
    spectral_normalize,
)
from .optim import Optimizer, OptimizerState, optimizer_step
from .serialize import CheckpointError
from .tensor import (
    Parameter,
    SecondOrderError,
    Tensor,
    gradient_of,
    no_grad,
)

__all__ = [
    "LSTM", "Activation", "BatchNorm", "Conv1D", "Dense", "Dropout", "Embedding", "Flatten",
    "Layer", "Sequential", "ShapeError", "SpectralNorm", "dropout_mask", "forward",
    "power_iteration", "recurrent_cell_step", "spectral_normalize", "Optimizer",
    "OptimizerState", "optimizer_step", "CheckpointError", "Parameter", "SecondOrderError",
    "Tensor", "gradient_of", "no_grad",
]
