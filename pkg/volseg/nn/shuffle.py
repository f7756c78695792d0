"""Pixel shuffle: channel blocks <-> spatial positions.

Channel index ``c·s³ + (dz·s + dy)·s + dx`` of the input lands at spatial
offset ``(dz, dy, dx)`` of channel ``c`` (``dx`` fastest).
"""

from typing import Optional

import numpy as np

from ..autograd import Function, Tensor
from ..exceptions import ShapeError
from .conv import Conv3dSpec, conv3d


def _shuffle(x: np.ndarray, s: int) -> np.ndarray:
    n, cs, d, h, w = x.shape
    c = cs // s**3
    y = x.reshape(n, c, s, s, s, d, h, w).transpose(0, 1, 5, 2, 6, 3, 7, 4)
    return np.ascontiguousarray(y.reshape(n, c, d * s, h * s, w * s))


def _unshuffle(x: np.ndarray, s: int) -> np.ndarray:
    n, c, ds, hs, ws = x.shape
    d, h, w = ds // s, hs // s, ws // s
    y = x.reshape(n, c, d, s, h, s, w, s).transpose(0, 1, 3, 5, 7, 2, 4, 6)
    return np.ascontiguousarray(y.reshape(n, c * s**3, d, h, w))


class PixelShuffle3d(Function):
    def forward(self, x: np.ndarray, scale: int = 1) -> np.ndarray:  # type: ignore
        if x.ndim != 5 or x.shape[1] % scale**3:
            raise ShapeError(
                f"pixel_shuffle3d needs channels divisible by {scale}^3", x.shape
            )
        self.scale = scale
        return _shuffle(x, scale)

    def backward(self, grad):
        return (_unshuffle(grad, self.scale),)


class PixelUnshuffle3d(Function):
    def forward(self, x: np.ndarray, scale: int = 1) -> np.ndarray:  # type: ignore
        if x.ndim != 5 or any(e % scale for e in x.shape[2:]):
            raise ShapeError(
                f"pixel_unshuffle3d needs extents divisible by {scale}", x.shape
            )
        self.scale = scale
        return _unshuffle(x, scale)

    def backward(self, grad):
        return (_shuffle(grad, self.scale),)


def pixel_shuffle3d(x: Tensor, s: int) -> Tensor:
    """[N, C·s³, D, H, W] -> [N, C, sD, sH, sW]."""
    return PixelShuffle3d.apply(x, scale=s)


def pixel_unshuffle3d(x: Tensor, s: int) -> Tensor:
    """[N, C, sD, sH, sW] -> [N, C·s³, D, H, W], the inverse of pixel_shuffle3d."""
    return PixelUnshuffle3d.apply(x, scale=s)


def subpixel_upsample(
    x: Tensor, s: int, weight: Tensor, bias: Optional[Tensor] = None
) -> Tensor:
    """Convolve to C·s³ channels, then shuffle the channel blocks into space.

    The kernel extent is read from ``weight`` ([C·s³, Cin, k, k, k]) and the
    padding keeps the spatial extent.
    """
    out_channels, in_channels = weight.shape[0], weight.shape[1]
    kernel = weight.shape[2]
    spec = Conv3dSpec(
        in_channels,
        out_channels,
        kernel=kernel,
        padding=kernel // 2,
        has_bias=bias is not None,
    )
    return pixel_shuffle3d(conv3d(x, spec, weight, bias), s)
