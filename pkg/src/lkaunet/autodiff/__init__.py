"""Reverse-mode automatic differentiation over the library's op set."""
from .tape import (
    PRIMITIVES,
    Parameter,
    Tape,
    UnregisteredPrimitiveError,
    Var,
    backward,
    forward_traced,
    primitive,
)
from . import ops
from .ops import (
    add,
    concat,
    conv3d,
    conv3d_transposed,
    div,
    exp,
    group_norm,
    leaky_relu,
    log,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    softplus,
    square,
    sub,
    sum,
)
from .gradcheck import GradcheckResult, gradcheck, gradcheck_report

__all__ = [
    "PRIMITIVES", "Parameter", "Tape", "UnregisteredPrimitiveError", "Var", "backward",
    "forward_traced", "primitive", "ops", "gradcheck", "gradcheck_report", "GradcheckResult", "add", "concat", "conv3d",
    "conv3d_transposed", "div", "exp", "group_norm", "leaky_relu", "log", "mean", "mul", "neg",
    "reshape", "sigmoid", "softmax", "softplus", "square", "sub", "sum",
]
