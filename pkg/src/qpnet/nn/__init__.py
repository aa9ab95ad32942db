"""Minimal dense numerical kernel with reverse-mode gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_gradient
from .ops import (
    add,
    conv1x1,
    cross_entropy,
    dilated_tap,
    gated_unit,
    onehot_conv,
    relu,
    softmax,
    softmax_cross_entropy,
    tanh,
    weighted_squared_error,
)
from .optim import Adam, adam_step
from .tensor import Parameter, Tensor, backward, no_grad

__all__ = [
    "Adam",
    "Parameter",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "check_gradients",
    "conv1x1",
    "cross_entropy",
    "dilated_tap",
    "gated_unit",
    "load_checkpoint",
    "no_grad",
    "numerical_gradient",
    "onehot_conv",
    "relu",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
    "tanh",
    "weighted_squared_error",
]
