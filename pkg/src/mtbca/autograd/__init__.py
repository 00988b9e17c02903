"""Minimal reverse-mode autodiff engine used by the model and trainer."""

from .functional import (
    BatchNormState,
    adaptive_avg_pool2d,
    avg_pool2d,
    batch_norm2d,
    conv2d,
    conv_transpose2d,
    dropout,
    global_avg_pool,
    global_max_pool,
    linear,
    pool2d,
    resize_bilinear,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import Adam, AdamState
from .tensor import (
    Tensor,
    add,
    default_dtype,
    div,
    exp,
    get_default_dtype,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
    softmax,
    sub,
)

__all__ = [
    "Adam",
    "AdamState",
    "BatchNormState",
    "Tensor",
    "adaptive_avg_pool2d",
    "add",
    "avg_pool2d",
    "batch_norm2d",
    "check_gradients",
    "conv2d",
    "conv_transpose2d",
    "default_dtype",
    "div",
    "dropout",
    "exp",
    "get_default_dtype",
    "global_avg_pool",
    "global_max_pool",
    "is_grad_enabled",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "numerical_grad",
    "pool2d",
    "relative_error",
    "relu",
    "resize_bilinear",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "sub",
]
