"""Sliding-window inference with uniform fusion of overlapping windows."""

import logging
from itertools import product
from typing import List, Sequence

import numpy as np

from ..autograd import Tensor
from ..exceptions import ShapeError
from ..nn.module import Module
from ..utils import Triple, to_triple

log = logging.getLogger(__name__)


def window_starts(extent: int, patch: int, overlap: float = 0.5) -> List[int]:
    """Start offsets covering [0, extent) with windows of ``patch`` voxels.

    Consecutive windows overlap by ``overlap·patch``; the last window is
    aligned with the upper border.
    """
    if extent <= patch:
        return [0]
    step = max(int(patch * (1 - overlap)), 1)
    starts = list(range(0, extent - patch + 1, step))
    if starts[-1] != extent - patch:
        starts.append(extent - patch)
    return starts


def sliding_window_logits(
    model: Module,
    image: Tensor,
    patch: Sequence[int],
    overlap: float = 0.5,
) -> np.ndarray:
    """Full-resolution logits [N, K, D, H, W] averaged over overlapping windows.

    Volumes smaller than the patch along an axis are zero padded to it.
    """
    if image.ndim != 5:
        raise ShapeError("Inference expects [N, C, D, H, W] images", image.shape)
    patch_t: Triple = to_triple(patch)  # type: ignore
    extent = image.shape[2:]
    padded_extent = tuple(max(e, p) for e, p in zip(extent, patch_t))
    data = np.pad(
        image.data,
        ((0, 0), (0, 0)) + tuple((0, pe - e) for pe, e in zip(padded_extent, extent)),
    )

    fused = None
    counts = np.zeros(padded_extent, dtype=data.dtype)
    windows = product(
        *(window_starts(e, p, overlap) for e, p in zip(padded_extent, patch_t))
    )
    for start in windows:
        region = tuple(slice(s, s + p) for s, p in zip(start, patch_t))
        logits = model(Tensor(data[(slice(None), slice(None)) + region]))[0].data
        if fused is None:
            fused = np.zeros(
                (data.shape[0], logits.shape[1], *padded_extent), dtype=data.dtype
            )
        fused[(slice(None), slice(None)) + region] += logits
        counts[region] += 1

    assert fused is not None
    fused /= counts
    d, h, w = extent
    return fused[:, :, :d, :h, :w]


def predict_labels(
    model: Module, image: Tensor, patch: Sequence[int], overlap: float = 0.5
) -> np.ndarray:
    """Hard labels [N, D, H, W] by argmax of the fused logits."""
    return np.argmax(sliding_window_logits(model, image, patch, overlap), axis=1)
