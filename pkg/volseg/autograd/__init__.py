"""Reverse-mode differentiation: tensors, the tape and the primitives."""

from .functional import (
    concat,
    constant,
    elementwise,
    linear,
    mean,
    permute,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_axis,
)
from .gradcheck import GradcheckReport, finite_difference_check
from .tape import Function, Tape, current_tape
from .tensor import Parameter, Tensor

__all__ = [
    "Function",
    "GradcheckReport",
    "Parameter",
    "Tape",
    "Tensor",
    "concat",
    "constant",
    "current_tape",
    "elementwise",
    "finite_difference_check",
    "linear",
    "mean",
    "permute",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax_axis",
]
