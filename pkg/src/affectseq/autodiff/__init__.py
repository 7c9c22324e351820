"""Minimal tape-based reverse-mode differentiation engine."""

from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    broadcast_to,
    clear_tape,
    concat,
    divide,
    matmul,
    multiply,
    no_grad,
    power,
    reduce_mean,
    reduce_sum,
    reshape,
    subtract,
    swapaxes,
    take,
    transpose,
)
from .ops import (
    MASKED_SCORE,
    absolute,
    dilated_causal_conv1d,
    dropout,
    exp,
    gelu,
    layer_norm,
    log,
    masked_fill,
    relu,
    sigmoid,
    softmax,
    tanh,
)

__all__ = [
    "MASKED_SCORE",
    "Tape",
    "Tensor",
    "absolute",
    "active_tape",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "clear_tape",
    "concat",
    "dilated_causal_conv1d",
    "divide",
    "dropout",
    "exp",
    "gelu",
    "layer_norm",
    "log",
    "masked_fill",
    "matmul",
    "multiply",
    "no_grad",
    "power",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "subtract",
    "swapaxes",
    "take",
    "tanh",
    "transpose",
]
