"""Decoder blocks: plain, residual, their deformable variants and the DSA block."""

import enum
from typing import Union

import numpy as np

from ..autograd import Tensor, relu
from ..exceptions import ShapeError
from ..nn.conv import Conv3dLayer
from ..nn.interpolate import resize_trilinear
from ..nn.module import Module
from ..nn.pooling import avg_pool3d
from .deformable import DeformableKernel


class DecoderBlockKind(str, enum.Enum):
    BASIC = "basic"
    RESIDUAL = "residual"
    BASIC_DEFORM = "basic_deform"
    RESIDUAL_DEFORM = "residual_deform"
    DSA = "dsa"


def _second_conv(
    rng: np.random.Generator, channels: int, deform: bool
) -> Union[Conv3dLayer, DeformableKernel]:
    if deform:
        return DeformableKernel(rng, channels, channels, k=3)
    return Conv3dLayer(rng, channels, channels, kernel=3)


class BasicBlock(Module):
    """conv → relu → conv → relu."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        deform: bool = False,
    ):
        self.conv1 = Conv3dLayer(rng, in_channels, out_channels, kernel=3)
        self.conv2 = _second_conv(rng, out_channels, deform)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return relu(self.conv2(relu(self.conv1(x))))


class ResidualBlock(Module):
    """relu(conv2(relu(conv1(x))) + skip(x)), skip a 1×1×1 projection."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        deform: bool = False,
    ):
        self.conv1 = Conv3dLayer(rng, in_channels, out_channels, kernel=3)
        self.conv2 = _second_conv(rng, out_channels, deform)
        self.skip = Conv3dLayer(rng, in_channels, out_channels, kernel=1)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return relu(self.conv2(relu(self.conv1(x))) + self.skip(x))


class DsaBlock(Module):
    """Deformable squeeze-and-attention block.

    χ_res = DefConv(relu(Conv(χ_in))) and
    χ_attn = Upsample(Conv₂(relu(Conv₁(Avg(χ_in))))) where Avg is a
    kernel-2 stride-2 ceil-mode pooling and Upsample restores the exact
    input extent. The output is χ_attn ⊗ χ_res ⊕ χ_attn; with
    ``literal_residual`` the fused input relu(Conv(χ_in)) replaces χ_res in
    the product.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        literal_residual: bool = False,
    ):
        self.literal_residual = literal_residual
        self.fuse = Conv3dLayer(rng, in_channels, out_channels, kernel=3)
        self.deform = DeformableKernel(rng, out_channels, out_channels, k=3)
        self.attn_conv1 = Conv3dLayer(rng, in_channels, out_channels, kernel=3)
        self.attn_conv2 = Conv3dLayer(rng, out_channels, out_channels, kernel=3)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return dsa_forward(x, self)

    def attention(self, x: Tensor) -> Tensor:
        pooled = avg_pool3d(x, kernel=2, stride=2, ceil_mode=True)
        attn = self.attn_conv2(relu(self.attn_conv1(pooled)))
        return resize_trilinear(attn, x.shape[2:])


def dsa_forward(x: Tensor, params: DsaBlock) -> Tensor:
    """[N, Cin, D, H, W] -> [N, Cout, D, H, W] for even and odd extents."""
    fused = relu(params.fuse(x))
    residual = params.deform(fused)
    attn = params.attention(x)
    if attn.shape != residual.shape:
        raise ShapeError(
            "Attention branch does not restore the extent", attn.shape, residual.shape
        )

    gated = fused if params.literal_residual else residual
    return attn * gated + attn


def build_decoder_block(
    kind: Union[DecoderBlockKind, str],
    in_channels: int,
    out_channels: int,
    rng: np.random.Generator,
    literal_residual: bool = False,
) -> Module:
    """Create a decoder block; the deform variants replace the second convolution."""
    kind = DecoderBlockKind(kind)
    if kind is DecoderBlockKind.DSA:
        return DsaBlock(
            rng, in_channels, out_channels, literal_residual=literal_residual
        )
    deform = kind in (DecoderBlockKind.BASIC_DEFORM, DecoderBlockKind.RESIDUAL_DEFORM)
    if kind in (DecoderBlockKind.RESIDUAL, DecoderBlockKind.RESIDUAL_DEFORM):
        return ResidualBlock(rng, in_channels, out_channels, deform=deform)
    return BasicBlock(rng, in_channels, out_channels, deform=deform)
