"""Deformable 3D convolution.

Every kernel tap ``p_n`` of output position ``p0`` reads the input at
``p0 + p_n + Δp_n``, where the offsets ``Δp_n`` are predicted from the
input by a regular convolution. Sampling is trilinear on the zero-padded
input, so zero offsets give back :func:`volseg.nn.conv3d` with zero padding.
"""

from itertools import product

import numpy as np

from ..autograd import Function, Tensor, constant, permute, reshape
from ..exceptions import ShapeError
from ..nn.conv import Conv3dLayer, zero_pad3d
from ..nn.init import he_normal, zeros
from ..nn.interpolate import grid_sample_trilinear
from ..nn.module import Module


class TapContract(Function):
    """Contract sampled taps [N, C, D, H, W, T] with a weight [Cout, C, T]."""

    def forward(  # type: ignore
        self, sampled: np.ndarray, weight: np.ndarray
    ) -> np.ndarray:
        if sampled.shape[1] != weight.shape[1] or sampled.shape[-1] != weight.shape[2]:
            raise ShapeError("Deformable weight mismatch", sampled.shape, weight.shape)
        return np.ascontiguousarray(
            np.einsum("ncdhwt,oct->nodhw", sampled, weight, optimize=True)
        )

    def backward(self, grad):
        sampled, weight = self.inputs[0].data, self.inputs[1].data
        grad_s = grad_w = None
        if self.needs_grad(0):
            grad_s = np.einsum("nodhw,oct->ncdhwt", grad, weight, optimize=True)
        if self.needs_grad(1):
            grad_w = np.einsum("nodhw,ncdhwt->oct", grad, sampled, optimize=True)
        return grad_s, grad_w


def tap_offsets(k: int) -> np.ndarray:
    """[k³, 3] integer displacements of the taps, row-major (w fastest)."""
    return np.asarray(list(product(range(k), repeat=3)), dtype=np.int64)


class DeformableKernel(Module):
    """A k³ convolution whose taps move by offsets predicted from its input.

    The offset predictor is a zero-initialized 3³ convolution producing
    3·k³ channels, tap-major: channel ``3·tap + axis``.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        k: int = 3,
        bias: bool = True,
    ):
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"Deformable kernel extent must be odd, got {k}")
        self.k = k
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = he_normal(
            rng, (out_channels, in_channels, k**3), fan_in=in_channels * k**3
        )
        if bias:
            self.bias = zeros((out_channels,))
        self.offset_predictor = Conv3dLayer(
            rng, in_channels, 3 * k**3, kernel=3, zero_init=True
        )

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return deform_conv3d(x, self)

    def conv_weight(self) -> np.ndarray:
        """The weight as a regular [Cout, Cin, k, k, k] convolution kernel."""
        k = self.k
        return self.weight.data.reshape(self.out_channels, self.in_channels, k, k, k)


def deform_conv3d(x: Tensor, kernel: DeformableKernel) -> Tensor:
    """y(p0) = Σ_n w(p_n)·x(p0 + p_n + Δp_n), same spatial extent as x.

    x is zero padded by k // 2 and the sampling positions are clamped to the
    padded frame. A constant input therefore gives the conv3d output for any
    offsets only where every sampled position stays clear of the zero border;
    near the border an offset can move a tap onto or off the padding.
    """
    if x.ndim != 5 or x.shape[1] != kernel.in_channels:
        raise ShapeError(
            f"deform_conv3d expects [N, {kernel.in_channels}, D, H, W] input", x.shape
        )
    n = x.shape[0]
    d, h, w = x.shape[2:]
    k = kernel.k
    taps = k**3

    offsets = reshape(kernel.offset_predictor(x), (n, taps, 3, d, h, w))
    offsets = permute(offsets, (0, 3, 4, 5, 1, 2))

    # regular sampling positions in the padded frame: p0 + tap
    grid = np.stack(
        np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij"), -1
    )
    regular = grid[:, :, :, None, :] + tap_offsets(k)[None, None, None]
    coords = offsets + constant(regular[None], x)

    sampled = grid_sample_trilinear(zero_pad3d(x, k // 2), coords)
    out = TapContract.apply(sampled, kernel.weight)
    if hasattr(kernel, "bias"):
        out = out + reshape(kernel.bias, (1, -1, 1, 1, 1))
    return out
