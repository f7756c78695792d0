"""Dense tensor value type.

Layout convention
-----------------
Volumes are stored row-major as ``[N, C, D, H, W]`` (batch, channels,
depth, height, width). Shapes written as ``H x W x D x C`` map onto this
layout as ``C -> axis 1, D -> axis 2, H -> axis 3, W -> axis 4``. Every
coordinate triple in the package (sampling grids, offsets, surface points)
is ordered ``(d, h, w)``, matching the last three axes.
"""

from typing import TYPE_CHECKING, Any, Optional, Sequence, Tuple, Union

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .tape import Tape

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]


def as_float_array(data: ArrayLike, dtype: Optional[Any] = None) -> np.ndarray:
    """Convert data into a contiguous f32 or f64 array.

    Without an explicit dtype, float32 and float64 arrays keep their dtype and
    everything else becomes float64.
    """
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
    else:
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
    if arr.dtype not in FLOAT_DTYPES:
        raise TypeError(f"Unsupported tensor dtype: {arr.dtype}")
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense N-dimensional array taking part in reverse-mode differentiation.

    ``data`` is always a contiguous numpy array of float32 or float64.
    Tensors produced by an operation recorded on a :class:`Tape` remember
    their node id on that tape; leaf tensors with ``requires_grad`` receive
    their gradient in ``grad`` when the tape runs backward.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Any] = None,
        name: Optional[str] = None,
    ):
        self.data: np.ndarray = as_float_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

        self._node: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def is_leaf(self) -> bool:
        return self._node is None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """Add grad into the gradient buffer of a leaf tensor."""
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = np.array(grad, copy=True)
        else:
            self.grad += grad

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag})"

    # Operators are thin wrappers around volseg.autograd.functional

    def _wrap(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Any) -> "Tensor":
        from .functional import add

        return add(self, self._wrap(other))

    def __radd__(self, other: Any) -> "Tensor":
        from .functional import add

        return add(self._wrap(other), self)

    def __sub__(self, other: Any) -> "Tensor":
        from .functional import sub

        return sub(self, self._wrap(other))

    def __rsub__(self, other: Any) -> "Tensor":
        from .functional import sub

        return sub(self._wrap(other), self)

    def __mul__(self, other: Any) -> "Tensor":
        from .functional import mul, scale

        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._wrap(other))

    def __rmul__(self, other: Any) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: Any) -> "Tensor":
        from .functional import div, scale

        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, self._wrap(other))

    def __neg__(self) -> "Tensor":
        from .functional import neg

        return neg(self)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from .functional import sum as sum_fn

        return sum_fn(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from .functional import mean

        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        from .functional import reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        from .functional import permute

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


class Parameter(Tensor):
    """A named learnable tensor with a zero-initialized gradient buffer.

    ``value`` is the parameter itself seen as a :class:`Tensor`; ``grad``
    always has the shape of the value and is only reset by
    :meth:`zero_grad`.
    """

    def __init__(self, data: ArrayLike, name: str = "", dtype: Optional[Any] = None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        if self.grad is None or self.grad.shape != self.data.shape:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)

    def assign(self, data: ArrayLike) -> None:
        """Replace the value in place, keeping the dtype and the shape."""
        new_data = np.asarray(data, dtype=self.data.dtype)
        if new_data.shape != self.data.shape:
            raise ValueError(
                f"Cannot assign shape {new_data.shape} to parameter "
                f"{self.name!r} of shape {self.data.shape}"
            )
        self.data[...] = new_data

    def astype(self, dtype: Any) -> None:
        """Convert the value and the gradient buffer to another float dtype."""
        self.data = as_float_array(self.data, dtype)
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"
