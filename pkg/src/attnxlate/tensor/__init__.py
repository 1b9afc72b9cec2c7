"""Minimal NCHW tensor library with reverse-mode autodiff, Adam and a gradient checker."""

from .core import GraphError, NonFiniteError, ShapeError, Tensor, backward, is_grad_enabled, no_grad
from .gradcheck import grad_check
from .ops import (
    activation, add, conv2d, elementwise, global_avg_pool, instance_norm, l1_mean, leaky_relu, mean,
    mul, nearest_upsample2x, pad2d, reduce_loss, relu, sigmoid, sq_mean, sub, sum_, tanh,
    transpose_conv2d,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "GraphError", "NonFiniteError", "ShapeError", "Tensor", "activation",
    "adam_step", "add", "backward", "conv2d", "elementwise", "global_avg_pool", "grad_check",
    "instance_norm", "is_grad_enabled", "l1_mean", "leaky_relu", "mean", "mul",
    "nearest_upsample2x", "no_grad", "pad2d", "reduce_loss", "relu", "sigmoid", "sq_mean", "sub",
    "sum_", "tanh", "transpose_conv2d",
]
