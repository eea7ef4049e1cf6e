"""A small reverse-mode tensor engine covering the operators used by GOE, HKCF and the losses."""

from .core import Tensor, as_tensor, double_precision, get_default_dtype, set_default_dtype
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    FAULTS,
    add,
    broadcast_to,
    clamp,
    concat_channels,
    conv2d,
    div,
    exp,
    global_avg_pool,
    hadamard,
    inject_fault,
    instance_norm,
    linear,
    log,
    mean,
    mul,
    neg,
    pad_edge,
    relu,
    reshape,
    sigmoid,
    softmax_channels,
    sqrt,
    square,
    sub,
    sum,
)

__all__ = [
    "Tensor", "as_tensor", "double_precision", "get_default_dtype", "set_default_dtype",
    "GradCheckReport", "grad_check", "FAULTS", "inject_fault",
    "add", "broadcast_to", "clamp", "concat_channels", "conv2d", "div", "exp",
    "global_avg_pool", "hadamard", "instance_norm", "linear", "log", "mean", "mul",
    "neg", "pad_edge", "relu", "reshape", "sigmoid", "softmax_channels", "sqrt", "square", "sub", "sum",
]
