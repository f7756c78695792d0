"""The interchangeable s-fold upsamplers of the decoder.

Every kind maps ``[N, C, D, H, W]`` to ``[N, C, sD, sH, sW]``.
"""

import enum
import logging

import numpy as np

from ..autograd import Tensor
from ..exceptions import ShapeError
from .conv import Conv3dLayer, ConvTranspose3dLayer, transposed_padding
from .interpolate import trilinear_upsample
from .module import Module
from .shuffle import subpixel_upsample

log = logging.getLogger(__name__)


class UpsamplerKind(str, enum.Enum):
    TRILINEAR = "trilinear"
    TRANSPOSED_CONV = "transposed_conv"
    SUBPIXEL_CONV = "subpixel_conv"
    ONSAMPLING = "onsampling"


class TrilinearUpsampler(Module):
    """Fixed-rule interpolation, no parameters."""

    def __init__(self, scale: int = 2):
        self.scale = scale

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return trilinear_upsample(x, self.scale)


class TransposedConvUpsampler(Module):
    """Strided transposed convolution with kernel ``2s`` (``s`` for odd scales).

    Both choices give every output voxel the same number of kernel
    footprints.
    """

    def __init__(self, rng: np.random.Generator, channels: int, scale: int = 2):
        kernel = 2 * scale if scale % 2 == 0 else scale
        self.conv = ConvTranspose3dLayer(
            rng,
            channels,
            channels,
            kernel=kernel,
            stride=scale,
            padding=transposed_padding(kernel, scale),
        )

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return self.conv(x)


class SubpixelUpsampler(Module):
    def __init__(
        self, rng: np.random.Generator, channels: int, scale: int = 2, kernel: int = 3
    ):
        self.scale = scale
        self.conv = Conv3dLayer(rng, channels, channels * scale**3, kernel=kernel)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return subpixel_upsample(x, self.scale, self.conv.weight, self.conv.bias)


def build_upsampler(
    kind: UpsamplerKind, channels: int, scale: int, rng: np.random.Generator
) -> Module:
    """Create an upsampler module of the requested kind.

    :param kind: which upsampling rule to use
    :param channels: channel count, preserved by every kind
    :param scale: integer upsampling factor s
    :param rng: generator for the learnable parameters
    """
    kind = UpsamplerKind(kind)
    if scale < 1:
        raise ShapeError(f"Upsampling factor must be >= 1, got {scale}")

    log.debug(
        "Building %s upsampler (channels=%d, scale=%d)", kind.value, channels, scale
    )

    if kind is UpsamplerKind.TRILINEAR:
        return TrilinearUpsampler(scale)
    if kind is UpsamplerKind.TRANSPOSED_CONV:
        return TransposedConvUpsampler(rng, channels, scale)
    if kind is UpsamplerKind.SUBPIXEL_CONV:
        return SubpixelUpsampler(rng, channels, scale)

    from ..decoder.onsampling import Onsampling, OnsamplingConfig

    return Onsampling(rng, OnsamplingConfig(in_channels=channels, scale=scale))
