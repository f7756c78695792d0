"""Offset coordinate neighborhood weighted upsampling.

Every output sub-pixel starts at its cell-midpoint coordinate ``G``, is
moved by a learned offset ``O`` (``S = G + O``) and becomes a softmax
weighted sum of the ``n³`` lattice voxels surrounding ``S``. The weights are
shared across channels, so output channel ``c`` only reads input channel
``c``.

The lattice corner indices are integers and constant in backward. The
gather has no true derivative with respect to ``S``; by default a
straight-through estimate stands in for it, so the offset branch trains:
the gradient of every gathered value is projected on the central-difference
slope of the input at that lattice voxel.
"""

import enum
import logging
from dataclasses import dataclass
from itertools import product
from math import prod
from typing import List, Optional, Sequence

import numpy as np

from ..autograd import Function, Tensor, constant, permute, reshape, sigmoid
from ..autograd import softmax_axis
from ..exceptions import ShapeError
from ..nn.conv import Conv3dLayer
from ..nn.interpolate import channels_last_rows, flat_index, scatter_rows
from ..nn.module import Module
from ..nn.shuffle import pixel_shuffle3d

log = logging.getLogger(__name__)


class OffsetGradient(str, enum.Enum):
    NONE = "none"
    """Coordinates get no gradient; the offset branch stays where it starts."""

    STRAIGHT_THROUGH = "straight_through"


@dataclass
class OnsamplingConfig:
    """Geometry of an onsampling upsampler."""

    in_channels: int
    """Channel count C_in of the input feature map."""

    scale: int = 2
    """Upsampling factor s."""

    neighborhood: int = 2
    """Neighbors per axis n; n³ lattice voxels contribute to every output."""

    mid_channels: Optional[int] = None
    """Compressed channels of the weight branch, max(C_in / 4, 8) by default."""

    offset_gradient: OffsetGradient = OffsetGradient.STRAIGHT_THROUGH
    """How the loss gradient reaches the sampling coordinates S."""

    def __post_init__(self):
        if self.scale < 1:
            raise ShapeError(f"Onsampling scale must be >= 1, got {self.scale}")
        if self.neighborhood < 2 or self.neighborhood % 2:
            raise ShapeError(
                f"Onsampling neighborhood must be a positive even number, "
                f"got {self.neighborhood}"
            )
        if self.mid_channels is None:
            self.mid_channels = max(self.in_channels // 4, 8)
        self.offset_gradient = OffsetGradient(self.offset_gradient)

    @property
    def offset_channels(self) -> int:
        return 3 * self.scale**3

    @property
    def weight_channels(self) -> int:
        return self.scale**3 * self.neighborhood**3


class GridRole(str, enum.Enum):
    BASE = "base"
    OFFSET = "offset"
    FINAL = "final"


@dataclass
class CoordinateGrid:
    """Sub-pixel coordinates in input-grid units, last axis ordered (d, h, w).

    The base grid has shape [sD, sH, sW, 3]; offset and final grids carry a
    batch axis: [N, sD, sH, sW, 3].
    """

    coords: Tensor
    role: GridRole

    @property
    def spatial_shape(self):
        return self.coords.shape[-4:-1]

    def compose(self, offset: "CoordinateGrid") -> "CoordinateGrid":
        """S = G + O."""
        if self.role is not GridRole.BASE or offset.role is not GridRole.OFFSET:
            raise ValueError(
                f"Cannot compose a {self.role.value} grid "
                f"with a {offset.role.value} grid"
            )
        if offset.spatial_shape != self.spatial_shape:
            raise ShapeError(
                "Offset grid mismatch", offset.coords.shape, self.coords.shape
            )
        base = reshape(self.coords, (1, *self.coords.shape))
        return CoordinateGrid(offset.coords + base, GridRole.FINAL)


@dataclass
class NeighborhoodWeights:
    """Softmax-normalized weights [N, n³, sD, sH, sW]; every column sums to 1."""

    weights: Tensor


def base_grid(s: int, out_shape: Sequence[int], dtype=np.float32) -> CoordinateGrid:
    """The fixed sub-pixel grid G[k] = (k + 0.5)/s - 0.5 per axis.

    :param s: upsampling factor
    :param out_shape: upsampled extent (sD, sH, sW)
    """
    if s < 1:
        raise ShapeError(f"Scale must be >= 1, got {s}")
    axes = [(np.arange(extent) + 0.5) / s - 0.5 for extent in out_shape]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return CoordinateGrid(Tensor(grid, dtype=dtype), GridRole.BASE)


def offset_branch(
    x: Tensor, conv1: Conv3dLayer, conv2: Conv3dLayer, s: int
) -> CoordinateGrid:
    """O = 0.5·sigmoid(conv1(x))·conv2(x), shuffled to [N, sD, sH, sW, 3]."""
    expected = 3 * s**3
    for conv in (conv1, conv2):
        if conv.spec.out_channels != expected:
            raise ShapeError(
                f"Offset convolutions must produce 3·s³ = {expected} channels",
                (conv.spec.out_channels,),
            )
    raw = sigmoid(conv1(x)) * conv2(x) * 0.5
    shuffled = pixel_shuffle3d(raw, s)
    return CoordinateGrid(permute(shuffled, (0, 2, 3, 4, 1)), GridRole.OFFSET)


def weight_branch(
    x: Tensor, compress: Conv3dLayer, encode: Conv3dLayer, s: int, n: int
) -> NeighborhoodWeights:
    """Compress, encode to s³·n³ channels, shuffle s³ into space, softmax."""
    if encode.spec.in_channels != compress.spec.out_channels:
        raise ShapeError(
            "Weight encoder does not read the compressed channels",
            (compress.spec.out_channels,),
            (encode.spec.in_channels,),
        )
    if encode.spec.out_channels != s**3 * n**3:
        raise ShapeError(
            f"Weight encoder must produce s³·n³ = {s**3 * n**3} channels",
            (encode.spec.out_channels,),
        )
    logits = pixel_shuffle3d(encode(compress(x)), s)
    return NeighborhoodWeights(softmax_axis(logits, axis=1))


def neighborhood_indices(
    coords: np.ndarray, n: int, extent: Sequence[int]
) -> np.ndarray:
    """Clamped lattice indices of the n³ voxels around every coordinate.

    Returns an int array [n³, N, P, 3] for coords of shape [N, P, 3]; neighbor
    ``j = (a·n + b)·n + c`` sits at ``floor(S) - (n/2 - 1) + (a, b, c)``.
    """
    base = np.floor(coords).astype(np.int64) - (n // 2 - 1)
    upper = np.asarray(extent, dtype=np.int64) - 1
    return np.stack(
        [
            np.clip(base + np.asarray(step), 0, upper)
            for step in product(range(n), repeat=3)
        ]
    )


def lattice_slopes(x: np.ndarray) -> List[np.ndarray]:
    """Central-difference slope of x [N, C, D, H, W] along d, h and w.

    Borders use one-sided differences; an axis of extent 1 has slope 0.
    """
    return [
        np.gradient(x, axis=axis) if x.shape[axis] > 1 else np.zeros_like(x)
        for axis in (2, 3, 4)
    ]


class GatherNeighborhood(Function):
    """x [N, C, D, H, W] gathered at integer lattice indices -> [N, C, n³, *S].

    The second input holds the coordinates [N, *S, 3] the indices were taken
    from. With ``straight_through`` it receives the output gradient projected
    on :func:`lattice_slopes` at every gathered voxel, otherwise nothing.
    """

    def forward(  # type: ignore
        self,
        x: np.ndarray,
        coords: np.ndarray,
        indices: Optional[np.ndarray] = None,
        straight_through: bool = False,
    ) -> np.ndarray:
        assert indices is not None
        n, c = x.shape[:2]
        self.extent = x.shape[2:]
        self.straight_through = straight_through
        batch = np.arange(n).reshape(1, n, 1)
        self.rows = flat_index(
            batch, (indices[..., 0], indices[..., 1], indices[..., 2]), self.extent
        )
        gathered = channels_last_rows(x)[self.rows]
        return np.ascontiguousarray(gathered.transpose(1, 3, 0, 2)).reshape(
            n, c, indices.shape[0], *coords.shape[1:-1]
        )

    def backward(self, grad):
        n, c = grad.shape[:2]
        neighbors = grad.shape[2]
        g = grad.reshape(n, c, neighbors, -1).transpose(2, 0, 3, 1)

        grad_x = None
        if self.needs_grad(0):
            grad_rows = np.zeros((n * prod(self.extent), c), dtype=grad.dtype)
            scatter_rows(grad_rows, self.rows, g)
            d, h, w = self.extent
            grad_x = np.ascontiguousarray(
                grad_rows.reshape(n, d, h, w, c).transpose(0, 4, 1, 2, 3)
            )

        grad_coords = None
        if self.straight_through and self.needs_grad(1):
            slopes = lattice_slopes(self.inputs[0].data)
            grad_coords = np.stack(
                [
                    (g * channels_last_rows(slope)[self.rows]).sum(axis=(0, 3))
                    for slope in slopes
                ],
                axis=-1,
            ).reshape(self.inputs[1].shape)

        return grad_x, grad_coords


def gather_neighborhood(
    x: Tensor, S: CoordinateGrid, n: int, straight_through: bool = False
) -> Tensor:
    """Raw values of the n³ lattice neighbors of every final coordinate.

    :param x: input features [N, C, D, H, W]
    :param S: final coordinates [N, sD, sH, sW, 3]
    :param n: neighbors per axis, even
    :param straight_through: send a slope-projected gradient back to ``S``
    :returns: [N, C, n³, sD, sH, sW]
    """
    if n < 2 or n % 2:
        raise ShapeError(f"Neighborhood must be a positive even number, got {n}")
    coords = S.coords
    if coords.ndim == 4:
        coords = reshape(coords, (1, *coords.shape))
    if coords.shape[0] != x.shape[0]:
        raise ShapeError("Coordinate grid batch mismatch", coords.shape, x.shape)
    flat = coords.data.reshape(coords.shape[0], -1, 3)
    indices = neighborhood_indices(flat, n, x.shape[2:])
    return GatherNeighborhood.apply(
        x, coords, indices=indices, straight_through=straight_through
    )


def weighted_sum(gathered: Tensor, weights: NeighborhoodWeights) -> Tensor:
    """χ'_i = Σ_j W_ij·χ_ij, with weights broadcast over the channels."""
    w = weights.weights
    if w.shape[0] != gathered.shape[0] or w.shape[1:] != gathered.shape[2:]:
        raise ShapeError("Neighborhood weights mismatch", w.shape, gathered.shape)
    return (gathered * reshape(w, (w.shape[0], 1, *w.shape[1:]))).sum(axis=2)


class Onsampling(Module):
    """Learnable s-fold upsampler made of an offset branch and a weight branch.

    The offset magnitude convolution and the weight encoder start at zero,
    so an untrained upsampler averages the n³ corners around the base grid.
    """

    def __init__(self, rng: np.random.Generator, config: OnsamplingConfig):
        self._config = config
        c, s = config.in_channels, config.scale
        self.conv1 = Conv3dLayer(rng, c, config.offset_channels, kernel=3)
        self.conv2 = Conv3dLayer(
            rng, c, config.offset_channels, kernel=3, zero_init=True
        )
        assert config.mid_channels is not None
        self.compress = Conv3dLayer(rng, c, config.mid_channels, kernel=1)
        self.encode = Conv3dLayer(
            rng, config.mid_channels, config.weight_channels, kernel=3, zero_init=True
        )
        log.debug("Onsampling %r", config)

    @property
    def config(self) -> OnsamplingConfig:
        return self._config

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return onsample_forward(x, self._config, self)


def onsample_forward(x: Tensor, cfg: OnsamplingConfig, params: Onsampling) -> Tensor:
    """[N, C, D, H, W] -> [N, C, sD, sH, sW]."""
    if x.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"Onsampling expects [N, {cfg.in_channels}, D, H, W]", x.shape)
    s, n = cfg.scale, cfg.neighborhood

    out_shape = [e * s for e in x.shape[2:]]
    grid = base_grid(s, out_shape, dtype=x.dtype)
    final = grid.compose(offset_branch(x, params.conv1, params.conv2, s))
    weights = weight_branch(x, params.compress, params.encode, s, n)
    straight_through = cfg.offset_gradient is OffsetGradient.STRAIGHT_THROUGH
    gathered = gather_neighborhood(x, final, n, straight_through=straight_through)
    return weighted_sum(gathered, weights)


def uniform_weights(like: Tensor, n: int, s: int) -> NeighborhoodWeights:
    """Weights 1/n³ for every neighbor of an s-fold upsampling of ``like``."""
    shape = (like.shape[0], n**3, *(e * s for e in like.shape[2:]))
    return NeighborhoodWeights(constant(np.full(shape, 1.0 / n**3), like))
