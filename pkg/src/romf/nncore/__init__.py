"""Minimal differentiable-layer core: float64 layers with reverse-mode
gradients and an Adam optimizer."""

from . import autodiff
from .autodiff import (
    Var,
    as_var,
    avg_pool1d,
    conv1d,
    upsample1d,
)
from .layers import (
    ACTIVATIONS,
    BatchNorm1D,
    Buffer,
    Conv1D,
    Dense,
    LSTMCell,
    LayerSpec,
    ParamStore,
    Parameter,
    activation_apply,
    batch_norm_forward,
    conv1d_forward,
    dense_forward,
    glorot_uniform,
    lstm_cell_step,
    weight_norm_apply,
)
from .losses import mse_loss, mse_value_and_grad
from .optim import AdamState, adam_step

__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "BatchNorm1D",
    "Buffer",
    "Conv1D",
    "Dense",
    "LSTMCell",
    "LayerSpec",
    "ParamStore",
    "Parameter",
    "Var",
    "activation_apply",
    "adam_step",
    "as_var",
    "autodiff",
    "avg_pool1d",
    "batch_norm_forward",
    "conv1d",
    "conv1d_forward",
    "dense_forward",
    "glorot_uniform",
    "lstm_cell_step",
    "mse_loss",
    "mse_value_and_grad",
    "upsample1d",
    "weight_norm_apply",
]
