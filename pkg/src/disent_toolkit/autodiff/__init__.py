"""Minimal define-by-run reverse-mode autodiff engine."""

from .conv import conv2d, conv_transpose2d
from .gradcheck import check_gradients
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    clip,
    concat,
    elementwise,
    getitem,
    leaky_relu,
    log_softmax,
    matmul,
    no_grad,
    reduce,
    reshape,
    transpose,
    zero_grad,
)

__all__ = [
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "check_gradients",
    "clip",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "elementwise",
    "getitem",
    "leaky_relu",
    "log_softmax",
    "matmul",
    "no_grad",
    "reduce",
    "reshape",
    "transpose",
    "zero_grad",
]
