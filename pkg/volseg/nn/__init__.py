"""3D network primitives: convolution, pooling, pixel shuffle and upsamplers."""

from .conv import (
    Conv3dLayer,
    Conv3dSpec,
    ConvTranspose3dLayer,
    conv3d,
    conv_transpose3d,
    overlap_count_map,
    transposed_padding,
    zero_pad3d,
)
from .init import DEFAULT_DTYPE
from .interpolate import grid_sample_trilinear, resize_trilinear, trilinear_upsample
from .linear import LinearLayer
from .module import Module
from .pooling import avg_pool3d, global_avg_pool
from .shuffle import pixel_shuffle3d, pixel_unshuffle3d, subpixel_upsample
from .upsample import UpsamplerKind, build_upsampler

__all__ = [
    "Conv3dLayer",
    "Conv3dSpec",
    "ConvTranspose3dLayer",
    "DEFAULT_DTYPE",
    "LinearLayer",
    "Module",
    "UpsamplerKind",
    "avg_pool3d",
    "build_upsampler",
    "conv3d",
    "conv_transpose3d",
    "global_avg_pool",
    "grid_sample_trilinear",
    "overlap_count_map",
    "pixel_shuffle3d",
    "pixel_unshuffle3d",
    "resize_trilinear",
    "subpixel_upsample",
    "transposed_padding",
    "trilinear_upsample",
    "zero_pad3d",
]
