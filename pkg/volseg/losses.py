"""Deep-supervised dice + cross-entropy loss.

Level ``i`` of the pyramid (``i = 1`` is the full-resolution output) is
weighted by ``w_i = 2^-(i-1) / Σ_{m=0}^{L} 2^-m`` for ``L`` levels. The
denominator has one more term than there are levels, so for ``L = 5`` the
weights add up to 62/63, not 1.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np

from .autograd import Tensor, constant, softmax_axis
from .autograd.functional import clamped_log
from .exceptions import LabelError, ShapeError

log = logging.getLogger(__name__)

SUPERVISION_LEVELS = 5


@dataclass
class LabelVolume:
    """Integer labels [N, D, H, W] with values in [0, num_classes)."""

    values: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.integer):
            raise LabelError(f"Labels must be integers, got {self.values.dtype}")
        if self.values.ndim == 3:
            self.values = self.values[None]
        if self.values.ndim != 4:
            raise ShapeError("Labels must be [N, D, H, W]", self.values.shape)
        if self.values.size and (
            self.values.min() < 0 or self.values.max() >= self.num_classes
        ):
            raise LabelError(
                f"Label values must lie in [0, {self.num_classes}), "
                f"got [{self.values.min()}, {self.values.max()}]"
            )

    @property
    def shape(self):
        return self.values.shape

    def one_hot(self, dtype=np.float32) -> np.ndarray:
        """[N, C, D, H, W] indicator g of every class."""
        classes = np.arange(self.num_classes).reshape(1, -1, 1, 1, 1)
        return (self.values[:, None] == classes).astype(dtype)


def deep_supervision_weights(
    levels: int = SUPERVISION_LEVELS, exact: bool = False
) -> List[Union[float, Fraction]]:
    """[w_1, ..., w_L], strictly decreasing.

    :param levels: number of supervised decoder levels
    :param exact: return Fractions instead of floats
    """
    if levels < 1:
        raise ValueError(f"Need at least one supervision level, got {levels}")
    denominator = sum(Fraction(1, 2**m) for m in range(levels + 1))
    weights = [Fraction(1, 2 ** (i - 1)) / denominator for i in range(1, levels + 1)]
    if exact:
        return list(weights)
    return [float(w) for w in weights]


def _check(logits: Tensor, labels: LabelVolume) -> None:
    if labels.values.size == 0 or logits.size == 0:
        raise LabelError("Cannot compute a loss on an empty volume")
    n, c = logits.shape[:2]
    if logits.ndim != 5 or (n, *logits.shape[2:]) != labels.shape:
        raise ShapeError("Logits do not match the labels", logits.shape, labels.shape)
    if c != labels.num_classes:
        raise ShapeError(
            f"Logits have {c} classes, labels {labels.num_classes}", logits.shape
        )


def dice_loss(logits: Tensor, labels: LabelVolume) -> Tensor:
    """1 - 2·Σ g·s / (Σ g + Σ s), summed over batch, voxels and every class."""
    _check(logits, labels)
    s = softmax_axis(logits, axis=1)
    g = constant(labels.one_hot(), logits)
    overlap = (s * g).sum()
    total = s.sum() + float(g.data.sum())
    return 1.0 - (overlap / total) * 2.0


def cross_entropy_loss(logits: Tensor, labels: LabelVolume) -> Tensor:
    """-(1/N) Σ_c Σ_i g·log s with N the number of voxels; log clamped at 1e-12."""
    _check(logits, labels)
    s = softmax_axis(logits, axis=1)
    g = constant(labels.one_hot(), logits)
    voxels = labels.values.size
    return (g * clamped_log(s)).sum() * (-1.0 / voxels)


def downsample_labels(labels: LabelVolume, factor: int) -> LabelVolume:
    """Nearest-neighbor subsampling at stride ``factor`` (index 0 of every cell)."""
    if factor < 1:
        raise ValueError(f"Downsampling factor must be >= 1, got {factor}")
    values = labels.values[:, ::factor, ::factor, ::factor]
    return LabelVolume(np.ascontiguousarray(values), labels.num_classes)


@dataclass
class SupervisionPyramid:
    """Logits of every decoder level with their labels and loss weights."""

    logits: List[Tensor]
    labels: List[LabelVolume]
    weights: List[float] = field(default_factory=list)

    @classmethod
    def build(
        cls, logits: Sequence[Tensor], labels: LabelVolume
    ) -> "SupervisionPyramid":
        """Downsample full-resolution labels to match logits at strides 1, 2, 4, ..."""
        levels = [downsample_labels(labels, 2**i) for i in range(len(logits))]
        weights = deep_supervision_weights(len(logits))
        return cls(list(logits), levels, weights)  # type: ignore


def level_loss(logits: Tensor, labels: LabelVolume) -> Tensor:
    return dice_loss(logits, labels) + cross_entropy_loss(logits, labels)


def total_loss(
    pyramid: SupervisionPyramid, expected_levels: Optional[int] = None
) -> Tensor:
    """Σ w_i·(L_dice,i + L_CE,i)."""
    count = len(pyramid.logits)
    if (
        count == 0
        or len(pyramid.labels) != count
        or len(pyramid.weights) != count
        or (expected_levels is not None and count != expected_levels)
    ):
        raise ShapeError(
            f"Supervision level mismatch: {count} logits, "
            f"{len(pyramid.labels)} labels, "
            f"{len(pyramid.weights)} weights, expected {expected_levels or count}"
        )

    total: Optional[Tensor] = None
    for logits, labels, weight in zip(pyramid.logits, pyramid.labels, pyramid.weights):
        term = level_loss(logits, labels) * float(weight)
        total = term if total is None else total + term
    assert total is not None
    return total
