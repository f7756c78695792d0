"""Elementwise, reduction and linear primitives with their backward rules.

Broadcasting is deliberately narrow: two operands broadcast only when they
have the same rank and every axis is either equal or 1 in one of them (for
example a ``[1, C, 1, 1, 1]`` channel vector against ``[N, C, D, H, W]``),
or when one operand is a scalar.
"""

from math import prod
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..exceptions import ShapeError
from .tape import Function
from .tensor import Tensor

Axis = Union[None, int, Sequence[int]]

LOG_FLOOR = 1e-12


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a

    if len(a) == 0 or (prod(a) == 1 and len(a) <= len(b) and set(a) <= {1}):
        return b
    if len(b) == 0 or (prod(b) == 1 and len(b) <= len(a) and set(b) <= {1}):
        return a

    if len(a) != len(b):
        raise ShapeError("Cannot broadcast tensors of different rank", a, b)

    out = []
    for extent_a, extent_b in zip(a, b):
        if extent_a == extent_b or extent_b == 1:
            out.append(extent_a)
        elif extent_a == 1:
            out.append(extent_b)
        else:
            raise ShapeError("Cannot broadcast", a, b)
    return tuple(out)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad back down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad

    if len(shape) != grad.ndim:
        return grad.sum().reshape(shape)

    axes = tuple(
        i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1
    )
    return grad.sum(axis=axes, keepdims=True)


class _Binary(Function):
    def _check(self, a: np.ndarray, b: np.ndarray) -> None:
        broadcast_shape(a.shape, b.shape)


class Add(_Binary):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore
        self._check(a, b)
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Sub(_Binary):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore
        self._check(a, b)
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


class Mul(_Binary):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore
        self._check(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        grad_a = unbroadcast(grad * b.data, a.shape) if self.needs_grad(0) else None
        grad_b = unbroadcast(grad * a.data, b.shape) if self.needs_grad(1) else None
        return grad_a, grad_b


class Div(_Binary):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore
        self._check(a, b)
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        grad_a = unbroadcast(grad / b.data, a.shape) if self.needs_grad(0) else None
        grad_b = None
        if self.needs_grad(1):
            grad_b = unbroadcast(-grad * a.data / (b.data * b.data), b.shape)
        return grad_a, grad_b


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore
        return -a

    def backward(self, grad):
        return (-grad,)


class Scale(Function):
    def forward(self, a: np.ndarray, factor: float = 1.0) -> np.ndarray:  # type: ignore
        self.factor = factor
        return a * a.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class Sigmoid(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore
        self.out = expit(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Relu(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class ClampedLog(Function):
    """log(max(a, floor)); the gradient is zero where the floor is active."""

    def forward(  # type: ignore
        self, a: np.ndarray, floor: float = LOG_FLOOR
    ) -> np.ndarray:
        self.active = a > floor
        self.safe = np.where(self.active, a, floor).astype(a.dtype)
        return np.log(self.safe)

    def backward(self, grad):
        return (np.where(self.active, grad / self.safe, 0).astype(grad.dtype),)


class Softmax(Function):
    def forward(self, a: np.ndarray, axis: int = -1) -> np.ndarray:  # type: ignore
        self.axis = axis
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


def _normalize_axes(axis: Axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"Axis {ax} out of range for rank {ndim}")
        normalized.append(ax % ndim)
    return tuple(sorted(normalized))


class Sum(Function):
    def forward(  # type: ignore
        self, a: np.ndarray, axis: Axis = None, keepdims: bool = False
    ) -> np.ndarray:
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=self.axes, keepdims=keepdims), dtype=a.dtype)

    def backward(self, grad):
        (a,) = self.inputs
        if self.axes is None:
            return (np.broadcast_to(grad.reshape(()), a.shape).copy(),)
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, a.shape).copy(),)


class Reshape(Function):
    def forward(  # type: ignore
        self, a: np.ndarray, shape: Tuple[int, ...] = ()
    ) -> np.ndarray:
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError(f"Cannot reshape to {tuple(shape)}", a.shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Permute(Function):
    def forward(  # type: ignore
        self, a: np.ndarray, axes: Tuple[int, ...] = ()
    ) -> np.ndarray:
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(f"Invalid permutation {tuple(axes)}", a.shape)
        self.axes = tuple(axes)
        return np.ascontiguousarray(a.transpose(self.axes))

    def backward(self, grad):
        return (np.ascontiguousarray(grad.transpose(np.argsort(self.axes))),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 1) -> np.ndarray:  # type: ignore
        first = arrays[0]
        for other in arrays[1:]:
            if other.ndim != first.ndim or any(
                e1 != e2
                for i, (e1, e2) in enumerate(zip(first.shape, other.shape))
                if i != axis
            ):
                raise ShapeError(
                    f"Cannot concatenate along axis {axis}", first.shape, other.shape
                )
        self.axis = axis
        self.splits = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Linear(Function):
    """y = x . W^T + b for x of shape [N, Cin] and W of shape [Cout, Cin]."""

    def forward(  # type: ignore
        self, x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None
    ) -> np.ndarray:
        if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
            raise ShapeError("Linear dimension mismatch", x.shape, weight.shape)
        out = x @ weight.T
        if bias is not None:
            if bias.shape != (weight.shape[0],):
                raise ShapeError("Linear bias mismatch", bias.shape, weight.shape)
            out = out + bias
        return out

    def backward(self, grad):
        x, weight = self.inputs[0], self.inputs[1]
        grad_x = grad @ weight.data if self.needs_grad(0) else None
        grad_w = grad.T @ x.data if self.needs_grad(1) else None
        if len(self.inputs) == 3:
            return grad_x, grad_w, grad.sum(axis=0)
        return grad_x, grad_w


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return Div.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=factor)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def exp(a: Tensor) -> Tensor:
    return Exp.apply(a)


def clamped_log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    return ClampedLog.apply(a, floor=floor)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"sigmoid": sigmoid, "relu": relu, "neg": neg}


def elementwise(
    op: str, a: Tensor, b: Optional[Tensor] = None, factor: float = 1.0
) -> Tensor:
    """Apply a named elementwise operation.

    :param op: one of add, sub, mul, sigmoid, relu, neg, scale
    :param a: first operand
    :param b: second operand, required by the binary operations
    :param factor: multiplier used by ``scale``
    """
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"Operation {op} needs two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[op](a)
    if op == "scale":
        return scale(a, factor)
    raise ValueError(f"Unknown elementwise operation: {op}")


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    """Softmax along one axis, stabilized by subtracting the maximum."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"Softmax axis {axis} out of range for rank {x.ndim}", x.shape)
    return Softmax.apply(x, axis=axis % x.ndim)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = x.size if axes is None else prod([x.shape[ax] for ax in axes])
    return scale(Sum.apply(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(x, axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if bias is None:
        return Linear.apply(x, weight)
    return Linear.apply(x, weight, bias)


def constant(value: Any, like: Tensor) -> Tensor:
    """A tensor which does not require grad, with the dtype of ``like``."""
    return Tensor(np.asarray(value, dtype=like.dtype))
