from itertools import product
from typing import Sequence, Tuple, Union

import numpy as np

from ..autograd import Function, Tensor, mean
from ..exceptions import ShapeError
from ..utils import Triple, to_triple


def pooled_extent(extent: int, kernel: int, stride: int, ceil_mode: bool) -> int:
    if ceil_mode:
        if extent < 1:
            raise ShapeError(f"Cannot pool an empty axis with kernel {kernel}")
        out = -(-max(extent - kernel, 0) // stride) + 1
        # the last window must start inside the input
        if (out - 1) * stride >= extent:
            out -= 1
        return out
    if extent < kernel:
        raise ShapeError(f"Pooling window {kernel} exceeds extent {extent}")
    return (extent - kernel) // stride + 1


class AvgPool3d(Function):
    """Windowed mean; in ceil mode partial border windows average their valid voxels."""

    def forward(  # type: ignore
        self,
        x: np.ndarray,
        kernel: Triple = (2, 2, 2),
        stride: Triple = (2, 2, 2),
        ceil_mode: bool = False,
    ) -> np.ndarray:
        self.kernel, self.stride = kernel, stride
        extent = x.shape[2:]
        self.out_extent = tuple(
            pooled_extent(e, k, s, ceil_mode) for e, k, s in zip(extent, kernel, stride)
        )
        needed = tuple(
            (o - 1) * s + k for o, s, k in zip(self.out_extent, stride, kernel)
        )
        pad_width = ((0, 0), (0, 0)) + tuple(
            (0, max(n - e, 0)) for n, e in zip(needed, extent)
        )
        xp = np.pad(x, pad_width)
        valid = np.pad(np.ones(extent, dtype=x.dtype), pad_width[2:])

        total = np.zeros(x.shape[:2] + self.out_extent, dtype=x.dtype)
        self.counts = np.zeros(self.out_extent, dtype=x.dtype)
        for tap in product(*(range(k) for k in kernel)):
            slices = self._slices(tap)
            total += xp[(slice(None), slice(None)) + slices]
            self.counts += valid[slices]

        self.padded_extent = xp.shape[2:]
        return total / self.counts

    def _slices(self, tap: Sequence[int]) -> Tuple[slice, ...]:
        return tuple(
            slice(t, t + s * (o - 1) + 1, s)
            for t, s, o in zip(tap, self.stride, self.out_extent)
        )

    def backward(self, grad):
        x = self.inputs[0].data
        share = grad / self.counts
        grad_xp = np.zeros(x.shape[:2] + self.padded_extent, dtype=x.dtype)
        for tap in product(*(range(k) for k in self.kernel)):
            grad_xp[(slice(None), slice(None)) + self._slices(tap)] += share
        d, h, w = x.shape[2:]
        return (grad_xp[:, :, :d, :h, :w],)


def avg_pool3d(
    x: Tensor,
    kernel: Union[int, Triple] = 2,
    stride: Union[int, Triple, None] = None,
    ceil_mode: bool = False,
) -> Tensor:
    """Mean over (possibly strided) windows.

    :param kernel: window extent
    :param stride: window step, the kernel by default
    :param ceil_mode: keep partial windows at the upper borders
    """
    if x.ndim != 5:
        raise ShapeError("avg_pool3d expects [N, C, D, H, W] input", x.shape)
    kernel_t = to_triple(kernel)
    stride_t = kernel_t if stride is None else to_triple(stride)
    return AvgPool3d.apply(x, kernel=kernel_t, stride=stride_t, ceil_mode=ceil_mode)


def global_avg_pool(x: Tensor) -> Tensor:
    """Reduce D, H, W to 1: [N, C, D, H, W] -> [N, C, 1, 1, 1]."""
    if x.ndim != 5:
        raise ShapeError("global_avg_pool expects [N, C, D, H, W] input", x.shape)
    return mean(x, axis=(2, 3, 4), keepdims=True)
