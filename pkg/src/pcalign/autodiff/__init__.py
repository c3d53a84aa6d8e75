"""Minimal reverse-mode autodiff over numpy, with the layer set the aligner needs."""

from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    cos,
    default_dtype,
    getitem,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    set_default_dtype,
    set_finite_check,
    sin,
    stop_gradient,
    sub,
    tsum,
    use_dtype,
    where,
)
from .nn import (
    BatchNormState,
    batchnorm,
    dropout,
    huber,
    linear,
    maxpool_points,
    relu,
    softmax_cross_entropy,
)
from .optim import AdamState, adam_step, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "cos",
    "default_dtype",
    "getitem",
    "matmul",
    "mean",
    "mul",
    "neg",
    "reshape",
    "set_default_dtype",
    "set_finite_check",
    "sin",
    "stop_gradient",
    "sub",
    "tsum",
    "use_dtype",
    "where",
    "BatchNormState",
    "batchnorm",
    "dropout",
    "huber",
    "linear",
    "maxpool_points",
    "relu",
    "softmax_cross_entropy",
    "AdamState",
    "adam_step",
    "zero_grads",
    "load_checkpoint",
    "save_checkpoint",
]
