"""3D convolution and its adjoint.

Both operators loop over kernel taps and contract channels with
:func:`numpy.tensordot`; padding is always zero padding.
"""

from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..autograd import Function, Tensor
from ..exceptions import ShapeError
from ..utils import Triple, to_triple
from .init import conv_weight, zeros
from .module import Module


@dataclass
class Conv3dSpec:
    """Geometry of a 3D convolution."""

    in_channels: int
    out_channels: int
    kernel: Union[int, Triple] = 3
    stride: Union[int, Triple] = 1
    padding: Union[int, Triple] = 0
    has_bias: bool = True

    def __post_init__(self):
        self.kernel = to_triple(self.kernel)
        self.stride = to_triple(self.stride)
        self.padding = to_triple(self.padding)

    def output_extent(self, extent: Sequence[int]) -> Triple:
        """floor((in + 2·pad - k) / stride) + 1 per axis, which must be >= 1."""
        out = tuple(
            (e + 2 * p - k) // s + 1
            for e, k, s, p in zip(
                extent, self.kernel, self.stride, self.padding  # type: ignore
            )
        )
        if any(o < 1 for o in out):
            raise ShapeError(
                f"Degenerate convolution output {out} "
                f"(kernel={self.kernel}, stride={self.stride}, padding={self.padding})",
                tuple(extent),
            )
        return out  # type: ignore

    def transposed_extent(self, extent: Sequence[int]) -> Triple:
        """(in - 1)·stride - 2·pad + k per axis, which must be >= 1."""
        out = tuple(
            (e - 1) * s - 2 * p + k
            for e, k, s, p in zip(
                extent, self.kernel, self.stride, self.padding  # type: ignore
            )
        )
        if any(o < 1 for o in out):
            raise ShapeError(f"Degenerate transposed convolution output {out}", extent)
        return out  # type: ignore


_BC = (slice(None), slice(None))


def _tap_slice(tap: int, stride: int, count: int) -> slice:
    return slice(tap, tap + stride * (count - 1) + 1, stride)


def _taps(kernel: Sequence[int]):
    return product(range(kernel[0]), range(kernel[1]), range(kernel[2]))


class Conv3d(Function):
    def forward(  # type: ignore
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray] = None,
        spec: Optional[Conv3dSpec] = None,
    ) -> np.ndarray:
        assert spec is not None
        self.spec = spec
        kernel, stride, padding = spec.kernel, spec.stride, spec.padding

        if x.ndim != 5 or x.shape[1] != spec.in_channels:
            raise ShapeError(
                f"conv3d expects [N, {spec.in_channels}, D, H, W] input", x.shape
            )
        expected = (spec.out_channels, spec.in_channels, *kernel)  # type: ignore
        if weight.shape != expected:
            raise ShapeError("conv3d weight mismatch", weight.shape, expected)

        self.out_extent = spec.output_extent(x.shape[2:])
        pad_width = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)  # type: ignore
        self.xp = np.pad(x, pad_width) if any(padding) else x  # type: ignore

        n = x.shape[0]
        out = np.zeros((spec.out_channels, n, *self.out_extent), dtype=x.dtype)
        for i, j, k in _taps(kernel):  # type: ignore
            window = self.xp[_BC + self._slices(i, j, k)]
            out += np.tensordot(weight[:, :, i, j, k], window, axes=([1], [1]))

        out = out.transpose(1, 0, 2, 3, 4)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1, 1)
        return np.ascontiguousarray(out)

    def _slices(self, i: int, j: int, k: int) -> Tuple[slice, slice, slice]:
        sd, sh, sw = self.spec.stride  # type: ignore
        od, oh, ow = self.out_extent
        return _tap_slice(i, sd, od), _tap_slice(j, sh, oh), _tap_slice(k, sw, ow)

    def backward(self, grad):
        x, weight = self.inputs[0].data, self.inputs[1].data
        kernel, padding = self.spec.kernel, self.spec.padding

        grad_xp = np.zeros_like(self.xp) if self.needs_grad(0) else None
        grad_w = np.zeros_like(weight) if self.needs_grad(1) else None

        for i, j, k in _taps(kernel):  # type: ignore
            slices = self._slices(i, j, k)
            if grad_w is not None:
                window = self.xp[_BC + slices]
                grad_w[:, :, i, j, k] = np.tensordot(
                    grad, window, axes=([0, 2, 3, 4], [0, 2, 3, 4])
                )
            if grad_xp is not None:
                contrib = np.tensordot(weight[:, :, i, j, k], grad, axes=([0], [1]))
                grad_xp[_BC + slices] += contrib.transpose(1, 0, 2, 3, 4)

        grad_x = None
        if grad_xp is not None:
            pd, ph, pw = padding  # type: ignore
            d, h, w = x.shape[2:]
            grad_x = grad_xp[:, :, pd : pd + d, ph : ph + h, pw : pw + w]

        if len(self.inputs) == 3:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3, 4))
        return grad_x, grad_w


class ConvTranspose3d(Function):
    """Adjoint of a strided :class:`Conv3d`; weight is [Cin, Cout, kd, kh, kw]."""

    def forward(  # type: ignore
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray] = None,
        spec: Optional[Conv3dSpec] = None,
    ) -> np.ndarray:
        assert spec is not None
        self.spec = spec
        kernel, stride, padding = spec.kernel, spec.stride, spec.padding

        if x.ndim != 5 or x.shape[1] != spec.in_channels:
            raise ShapeError(
                f"conv_transpose3d expects [N, {spec.in_channels}, D, H, W] input",
                x.shape,
            )
        expected = (spec.in_channels, spec.out_channels, *kernel)  # type: ignore
        if weight.shape != expected:
            raise ShapeError("conv_transpose3d weight mismatch", weight.shape, expected)

        self.in_extent = x.shape[2:]
        self.out_extent = spec.transposed_extent(self.in_extent)
        full = tuple(
            o + 2 * p for o, p in zip(self.out_extent, padding)  # type: ignore
        )

        n = x.shape[0]
        out = np.zeros((spec.out_channels, n, *full), dtype=x.dtype)
        for i, j, k in _taps(kernel):  # type: ignore
            contrib = np.tensordot(weight[:, :, i, j, k], x, axes=([0], [1]))
            out[_BC + self._slices(i, j, k)] += contrib

        pd, ph, pw = padding  # type: ignore
        od, oh, ow = self.out_extent
        out = out[:, :, pd : pd + od, ph : ph + oh, pw : pw + ow]
        out = out.transpose(1, 0, 2, 3, 4)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1, 1)
        return np.ascontiguousarray(out)

    def _slices(self, i: int, j: int, k: int) -> Tuple[slice, slice, slice]:
        sd, sh, sw = self.spec.stride  # type: ignore
        d, h, w = self.in_extent
        return _tap_slice(i, sd, d), _tap_slice(j, sh, h), _tap_slice(k, sw, w)

    def backward(self, grad):
        x, weight = self.inputs[0].data, self.inputs[1].data
        padding = self.spec.padding
        pad_width = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)  # type: ignore
        grad_full = np.pad(grad, pad_width) if any(padding) else grad  # type: ignore

        grad_x = np.zeros_like(x) if self.needs_grad(0) else None
        grad_w = np.zeros_like(weight) if self.needs_grad(1) else None

        for i, j, k in _taps(self.spec.kernel):  # type: ignore
            window = grad_full[_BC + self._slices(i, j, k)]
            if grad_x is not None:
                contrib = np.tensordot(weight[:, :, i, j, k], window, axes=([1], [1]))
                grad_x += contrib.transpose(1, 0, 2, 3, 4)
            if grad_w is not None:
                grad_w[:, :, i, j, k] = np.tensordot(
                    x, window, axes=([0, 2, 3, 4], [0, 2, 3, 4])
                )

        if len(self.inputs) == 3:
            return grad_x, grad_w, grad.sum(axis=(0, 2, 3, 4))
        return grad_x, grad_w


def conv3d(
    x: Tensor, spec: Conv3dSpec, weight: Tensor, bias: Optional[Tensor] = None
) -> Tensor:
    """y(p0) = Σ_{pn ∈ R} w(pn)·x(p0 + pn) with zero padding, plus bias."""
    if bias is None:
        return Conv3d.apply(x, weight, spec=spec)
    return Conv3d.apply(x, weight, bias, spec=spec)


def conv_transpose3d(
    x: Tensor, spec: Conv3dSpec, weight: Tensor, bias: Optional[Tensor] = None
) -> Tensor:
    if bias is None:
        return ConvTranspose3d.apply(x, weight, spec=spec)
    return ConvTranspose3d.apply(x, weight, bias, spec=spec)


def transposed_padding(kernel: int, scale: int) -> int:
    """Padding making a kernel/stride pair upsample by exactly ``scale``.

    The output extent is ``in·s - 2·pad + (k - s)``, so ``k - s`` must be even.
    """
    if scale < 1 or kernel < scale or (kernel - scale) % 2:
        raise ShapeError(
            f"Kernel {kernel} with stride {scale} cannot upsample by exactly {scale}"
        )
    return (kernel - scale) // 2


def overlap_count_map(
    in_extent: Sequence[int],
    kernel: Union[int, Triple],
    stride: Union[int, Triple],
    padding: Union[int, Triple] = 0,
) -> np.ndarray:
    """Number of kernel footprints covering every output voxel of a transposed conv.

    An uneven map is the precondition of checkerboard artifacts.
    """
    spec = Conv3dSpec(
        1, 1, kernel=kernel, stride=stride, padding=padding, has_bias=False
    )
    ones = np.ones((1, 1, *to_triple(in_extent)))  # type: ignore
    weight = np.ones((1, 1, *spec.kernel))  # type: ignore
    op = ConvTranspose3d(Tensor(ones), Tensor(weight))
    counts = op.forward(ones, weight, spec=spec)
    return np.rint(counts[0, 0]).astype(np.int64)


class Conv3dLayer(Module):
    """A convolution holding its own weight and bias."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        zero_init: bool = False,
    ):
        if padding is None:
            padding = kernel // 2
        self.spec = Conv3dSpec(
            in_channels, out_channels, kernel, stride, padding, has_bias=bias
        )
        if zero_init:
            shape = (out_channels, in_channels, *self.spec.kernel)
            self.weight = zeros(shape, name="weight")  # type: ignore
        else:
            self.weight = conv_weight(
                rng, out_channels, in_channels, self.spec.kernel  # type: ignore
            )
        if bias:
            self.bias = zeros((out_channels,))

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return conv3d(x, self.spec, self.weight, getattr(self, "bias", None))


class ConvTranspose3dLayer(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        padding: int,
        bias: bool = True,
    ):
        self.spec = Conv3dSpec(
            in_channels, out_channels, kernel, stride, padding, has_bias=bias
        )
        self.weight = conv_weight(
            rng, in_channels, out_channels, self.spec.kernel  # type: ignore
        )
        if bias:
            self.bias = zeros((out_channels,))

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return conv_transpose3d(x, self.spec, self.weight, getattr(self, "bias", None))


class ZeroPad3d(Function):
    def forward(  # type: ignore
        self, x: np.ndarray, padding: Triple = (0, 0, 0)
    ) -> np.ndarray:
        self.padding = padding
        return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))

    def backward(self, grad):
        pd, ph, pw = self.padding
        d, h, w = self.inputs[0].shape[2:]
        inner = grad[:, :, pd : pd + d, ph : ph + h, pw : pw + w]
        return (np.ascontiguousarray(inner),)


def zero_pad3d(x: Tensor, padding: Union[int, Triple]) -> Tensor:
    """Surround D, H and W with ``padding`` zeros on both sides."""
    if x.ndim != 5:
        raise ShapeError("zero_pad3d expects [N, C, D, H, W] input", x.shape)
    return ZeroPad3d.apply(x, padding=to_triple(padding))
