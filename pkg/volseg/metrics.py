"""Dice score and 95th percentile Hausdorff distance on hard label volumes."""

import csv
import logging
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import anyio
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import EmptySurfaceError, ShapeError

log = logging.getLogger(__name__)

Spacing = Tuple[float, float, float]

REPORT_COLUMNS = ("volume_id", "class", "dice", "hd95")


def dice_score(pred: np.ndarray, gt: np.ndarray, c: int) -> float:
    """2·|Y ∩ Ŷ| / (|Y| + |Ŷ|) for class ``c``; 1.0 when both masks are empty."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError("Cannot compare label volumes", pred.shape, gt.shape)
    y_pred = pred == c
    y_true = gt == c
    total = int(y_pred.sum()) + int(y_true.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(y_pred, y_true).sum()) / total


@dataclass
class SurfacePointSet:
    points: np.ndarray
    """Integer voxel coordinates [M, 3], ordered (d, h, w)."""

    spacing: Spacing = (1.0, 1.0, 1.0)
    """Voxel size in mm along (d, h, w)."""

    def __len__(self) -> int:
        return len(self.points)

    def physical(self, spacing: Optional[Spacing] = None) -> np.ndarray:
        if spacing is None:
            spacing = self.spacing
        scale = np.asarray(spacing, dtype=np.float64)
        return self.points.astype(np.float64) * scale


_FACE_NEIGHBORS = ndimage.generate_binary_structure(3, 1)


def extract_surface(
    mask: np.ndarray, spacing: Spacing = (1.0, 1.0, 1.0)
) -> SurfacePointSet:
    """Mask voxels with a 6-connected neighbor outside the mask or the volume."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ShapeError("Surface extraction expects a [D, H, W] mask", mask.shape)
    interior = ndimage.binary_erosion(mask, structure=_FACE_NEIGHBORS, border_value=0)
    points = np.argwhere(mask & ~interior)
    return SurfacePointSet(points, tuple(spacing))  # type: ignore


def nearest_rank(distances: np.ndarray, percentile: int = 95) -> float:
    """Value at 1-based rank ceil(percentile/100·M) of the ascending list."""
    ordered = np.sort(distances)
    rank = max(-(-percentile * len(ordered) // 100), 1)
    return float(ordered[rank - 1])


def directed_distances(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Euclidean distance of every source point to the closest target point."""
    distances, _ = cKDTree(target).query(source, k=1)
    return np.asarray(distances, dtype=np.float64)


def hd95(
    pred_surface: SurfacePointSet,
    gt_surface: SurfacePointSet,
    spacing: Optional[Spacing] = None,
    percentile: int = 95,
) -> float:
    """Max of the two directed 95th percentile surface distances.

    :param spacing: overrides the spacing stored in the point sets
    :param percentile: 100 gives the plain Hausdorff distance
    :raises EmptySurfaceError: if either surface is empty
    """
    if len(pred_surface) == 0 or len(gt_surface) == 0:
        raise EmptySurfaceError(
            f"Surface distance undefined: prediction has {len(pred_surface)} points, "
            f"ground truth {len(gt_surface)}"
        )
    pred_points = pred_surface.physical(spacing)
    gt_points = gt_surface.physical(spacing)
    return max(
        nearest_rank(directed_distances(pred_points, gt_points), percentile),
        nearest_rank(directed_distances(gt_points, pred_points), percentile),
    )


@dataclass
class MetricRow:
    volume_id: str
    class_id: int
    dice: float
    hd95: float


def evaluate_volume(
    volume_id: str,
    pred: np.ndarray,
    gt: np.ndarray,
    num_classes: int,
    spacing: Spacing = (1.0, 1.0, 1.0),
) -> List[MetricRow]:
    """Dice and HD95 of every foreground class of one [D, H, W] volume.

    An undefined HD95 (empty prediction or ground truth) is reported as NaN.
    """
    rows = []
    for c in range(1, num_classes):
        try:
            distance = hd95(
                extract_surface(pred == c, spacing), extract_surface(gt == c, spacing)
            )
        except EmptySurfaceError as exc:
            log.warning("%s class %d: %s", volume_id, c, exc)
            distance = math.nan
        rows.append(MetricRow(volume_id, c, dice_score(pred, gt, c), distance))
    return rows


async def evaluate_volumes_async(
    volumes: Sequence[Tuple[str, np.ndarray, np.ndarray]],
    num_classes: int,
    spacing: Spacing = (1.0, 1.0, 1.0),
    workers: int = 1,
) -> List[MetricRow]:
    """Evaluate volumes in worker threads; rows keep the order of ``volumes``."""
    limiter = anyio.CapacityLimiter(max(workers, 1))
    results: List[List[MetricRow]] = [[] for _ in volumes]

    async def run(index: int, volume_id: str, pred: np.ndarray, gt: np.ndarray):
        results[index] = await anyio.to_thread.run_sync(
            partial(evaluate_volume, volume_id, pred, gt, num_classes, spacing),
            limiter=limiter,
        )

    async with anyio.create_task_group() as tg:
        for index, (volume_id, pred, gt) in enumerate(volumes):
            tg.start_soon(run, index, volume_id, pred, gt)

    return [row for rows in results for row in rows]


def evaluate_volumes(
    volumes: Sequence[Tuple[str, np.ndarray, np.ndarray]],
    num_classes: int,
    spacing: Spacing = (1.0, 1.0, 1.0),
    workers: int = 1,
) -> List[MetricRow]:
    return anyio.run(
        partial(evaluate_volumes_async, volumes, num_classes, spacing, workers)
    )


def summarize(rows: Iterable[MetricRow]) -> Dict[str, float]:
    """Per-class and overall means; NaN distances are left out of the means."""
    by_class: Dict[int, List[MetricRow]] = {}
    for row in rows:
        by_class.setdefault(row.class_id, []).append(row)

    summary: Dict[str, float] = {}
    all_dice: List[float] = []
    all_hd: List[float] = []
    for c in sorted(by_class):
        dice = [r.dice for r in by_class[c]]
        hd = [r.hd95 for r in by_class[c] if not math.isnan(r.hd95)]
        summary[f"dice_c{c}"] = float(np.mean(dice))
        summary[f"hd95_c{c}"] = float(np.mean(hd)) if hd else math.nan
        all_dice.extend(dice)
        all_hd.extend(hd)

    summary["mean_dice"] = float(np.mean(all_dice)) if all_dice else math.nan
    summary["mean_hd95"] = float(np.mean(all_hd)) if all_hd else math.nan
    return summary


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def write_metric_report(rows: Sequence[MetricRow], path: Union[str, Path]) -> None:
    """CSV with one row per (volume, class) and a final row of means."""
    summary = summarize(rows)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.volume_id, row.class_id, _fmt(row.dice), _fmt(row.hd95)]
            )
        writer.writerow(
            ["mean", "all", _fmt(summary["mean_dice"]), _fmt(summary["mean_hd95"])]
        )
    log.info("Wrote metric report for %d rows to %s", len(rows), path)
