"""Trilinear interpolation on the voxel lattice.

One convention is used everywhere: align-corners=false, i.e. output voxel
``k`` of an ``s``-fold resize samples input coordinate ``(k + 0.5)/s - 0.5``,
and lattice indices are clamped to the volume borders.
"""

from itertools import product
from math import prod
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Function, Tensor
from ..exceptions import ShapeError
from ..utils import Triple


def interpolation_matrix(in_len: int, out_len: int, dtype=np.float64) -> np.ndarray:
    """Dense [out_len, in_len] matrix of 1D linear interpolation weights."""
    matrix = np.zeros((out_len, in_len), dtype=dtype)
    coords = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    lower = np.floor(coords)
    frac = coords - lower
    i0 = np.clip(lower.astype(np.int64), 0, in_len - 1)
    i1 = np.clip(lower.astype(np.int64) + 1, 0, in_len - 1)
    rows = np.arange(out_len)
    np.add.at(matrix, (rows, i0), 1 - frac)
    np.add.at(matrix, (rows, i1), frac)
    return matrix


class Resize(Function):
    """Separable trilinear resize of [N, C, D, H, W] to an exact spatial size."""

    def forward(  # type: ignore
        self, x: np.ndarray, size: Triple = (1, 1, 1)
    ) -> np.ndarray:
        self.matrices = [
            interpolation_matrix(e, o, dtype=x.dtype) for e, o in zip(x.shape[2:], size)
        ]
        md, mh, mw = self.matrices
        y = np.einsum("ncdhw,Ww->ncdhW", x, mw, optimize=True)
        y = np.einsum("ncdhw,Hh->ncdHw", y, mh, optimize=True)
        return np.ascontiguousarray(np.einsum("ncdhw,Dd->ncDhw", y, md, optimize=True))

    def backward(self, grad):
        md, mh, mw = self.matrices
        g = np.einsum("ncDhw,Dd->ncdhw", grad, md, optimize=True)
        g = np.einsum("ncdHw,Hh->ncdhw", g, mh, optimize=True)
        g = np.einsum("ncdhW,Ww->ncdhw", g, mw, optimize=True)
        return (np.ascontiguousarray(g),)


def resize_trilinear(x: Tensor, size: Sequence[int]) -> Tensor:
    if x.ndim != 5 or len(size) != 3 or any(int(s) < 1 for s in size):
        raise ShapeError(f"Cannot resize to {tuple(size)}", x.shape)
    return Resize.apply(x, size=tuple(int(s) for s in size))


def trilinear_upsample(x: Tensor, s: int) -> Tensor:
    """Fixed-rule s-fold upsampling [N, C, D, H, W] -> [N, C, sD, sH, sW]."""
    if s < 1:
        raise ShapeError(f"Upsampling factor must be >= 1, got {s}", x.shape)
    return resize_trilinear(x, [e * s for e in x.shape[2:]])


def scatter_rows(
    target: np.ndarray, rows: np.ndarray, values: np.ndarray
) -> None:
    """target[rows[i]] += values[i] for a 2D target, with repeated rows summed."""
    rows = rows.reshape(-1)
    values = values.reshape(rows.size, -1)
    for c in range(target.shape[1]):
        target[:, c] += np.bincount(
            rows, weights=values[:, c], minlength=target.shape[0]
        ).astype(target.dtype, copy=False)


def channels_last_rows(x: np.ndarray) -> np.ndarray:
    """[N, C, D, H, W] -> [N·D·H·W, C] so that a flat voxel index selects a row."""
    n, c = x.shape[:2]
    return np.ascontiguousarray(x.transpose(0, 2, 3, 4, 1)).reshape(-1, c)


def flat_index(
    batch: np.ndarray, idx: Sequence[np.ndarray], extent: Sequence[int]
) -> np.ndarray:
    d, h, w = extent
    return ((batch * d + idx[0]) * h + idx[1]) * w + idx[2]


class GridSample(Function):
    """Sample x [N, C, D, H, W] at real coordinates [N, *S, 3] (grid units, (d, h, w)).

    Output is [N, C, *S]; gradients flow to both x and the coordinates.
    """

    def forward(self, x: np.ndarray, coords: np.ndarray) -> np.ndarray:  # type: ignore
        n, c = x.shape[:2]
        if x.ndim != 5 or coords.shape[0] != n or coords.shape[-1] != 3:
            raise ShapeError(
                "grid_sample expects coords of shape [N, ..., 3]", x.shape, coords.shape
            )

        self.extent = x.shape[2:]
        self.out_spatial = coords.shape[1:-1]
        points = prod(self.out_spatial)

        flat = coords.reshape(n, points, 3)
        lower = np.floor(flat)
        self.frac = flat - lower
        lower_idx = lower.astype(np.int64)
        self.idx: List[Tuple[np.ndarray, np.ndarray]] = [
            (
                np.clip(lower_idx[..., a], 0, self.extent[a] - 1),
                np.clip(lower_idx[..., a] + 1, 0, self.extent[a] - 1),
            )
            for a in range(3)
        ]
        self.batch = np.arange(n).reshape(n, 1)

        rows = channels_last_rows(x)
        out = np.zeros((n, points, c), dtype=x.dtype)
        for corner, weight in self._corners():
            out += weight[..., None] * rows[corner]

        out = np.ascontiguousarray(out.transpose(0, 2, 1))
        return out.reshape(n, c, *self.out_spatial)

    def _axis_weights(self, a: int, bit: int) -> np.ndarray:
        return self.frac[..., a] if bit else 1 - self.frac[..., a]

    def _corners(self):
        for bits in product((0, 1), repeat=3):
            idx = [self.idx[a][bits[a]] for a in range(3)]
            weight = (
                self._axis_weights(0, bits[0])
                * self._axis_weights(1, bits[1])
                * self._axis_weights(2, bits[2])
            )
            yield flat_index(self.batch, idx, self.extent), weight

    def backward(self, grad):
        x = self.inputs[0].data
        n, c = x.shape[:2]
        g = np.ascontiguousarray(grad.reshape(n, c, -1).transpose(0, 2, 1))

        grad_rows: Optional[np.ndarray] = None
        grad_coords: Optional[np.ndarray] = None
        if self.needs_grad(0):
            grad_rows = np.zeros((x.size // c, c), dtype=x.dtype)
        if self.needs_grad(1):
            grad_coords = np.zeros(self.frac.shape, dtype=x.dtype)
        rows = channels_last_rows(x) if grad_coords is not None else None

        for bits in product((0, 1), repeat=3):
            idx = [self.idx[a][bits[a]] for a in range(3)]
            lin = flat_index(self.batch, idx, self.extent)
            axis_w = [self._axis_weights(a, bits[a]) for a in range(3)]

            if grad_rows is not None:
                weight = axis_w[0] * axis_w[1] * axis_w[2]
                scatter_rows(grad_rows, lin, weight[..., None] * g)

            if grad_coords is not None:
                assert rows is not None
                projected = (g * rows[lin]).sum(axis=-1)
                for a in range(3):
                    sign = 1.0 if bits[a] else -1.0
                    others = [axis_w[b] for b in range(3) if b != a]
                    grad_coords[..., a] += sign * others[0] * others[1] * projected

        grad_x = None
        if grad_rows is not None:
            d, h, w = self.extent
            grad_x = np.ascontiguousarray(
                grad_rows.reshape(n, d, h, w, c).transpose(0, 4, 1, 2, 3)
            )
        if grad_coords is not None:
            grad_coords = grad_coords.reshape(self.inputs[1].shape)
        return grad_x, grad_coords


def grid_sample_trilinear(x: Tensor, coords: Tensor) -> Tensor:
    """Trilinear interpolation of the 8 lattice neighbors of every coordinate.

    Lattice indices are clamped to the borders, so every real coordinate is
    valid; the operator is differentiable with respect to x and coords
    (except exactly at integer coordinates).
    """
    return GridSample.apply(x, coords)
