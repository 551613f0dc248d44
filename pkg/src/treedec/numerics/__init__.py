from .autodiff import (
    DomainError,
    ShapeMismatch,
    Tensor,
    ZeroDim,
    adaptive_avg_pool,
    add,
    backward,
    bce_with_logits,
    concat,
    constant,
    conv2d,
    cross_entropy,
    exp,
    kl_divergence,
    log,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    take_row,
    tanh,
    transpose,
    tsum,
)
from .kernels import BACKEND
from .nn import AllMasked, gru_cell, gru_params, masked_cross_entropy, masked_softmax
from .params import Adadelta, ParamStore

__all__ = [
    "Adadelta",
    "AllMasked",
    "BACKEND",
    "DomainError",
    "ParamStore",
    "ShapeMismatch",
    "Tensor",
    "ZeroDim",
    "adaptive_avg_pool",
    "add",
    "backward",
    "bce_with_logits",
    "concat",
    "constant",
    "conv2d",
    "cross_entropy",
    "exp",
    "gru_cell",
    "gru_params",
    "kl_divergence",
    "log",
    "masked_cross_entropy",
    "masked_softmax",
    "matmul",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "take_row",
    "tanh",
    "transpose",
    "tsum",
]
