"""Dense tensors, layer primitives and reverse-mode gradients."""
from . import kernels
from .core import GradTape, Parameter, Tensor, active_tape, backward
from .ops import (
    RunningStats,
    activation,
    add,
    batchnorm2d,
    concat,
    conv2d,
    conv_output_size,
    dense,
    flatten,
    global_avg_pool,
    maxpool2d,
    mse_loss,
    relu,
    relu6,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    sum_all,
    upsample2x,
)

__all__ = [
    "GradTape", "Parameter", "RunningStats", "Tensor", "activation", "active_tape", "add",
    "backward", "batchnorm2d", "concat", "conv2d", "conv_output_size", "dense", "flatten",
    "global_avg_pool", "kernels", "maxpool2d", "mse_loss", "relu", "relu6", "reshape",
    "scale", "softmax", "softmax_cross_entropy", "sum_all", "upsample2x",
]
