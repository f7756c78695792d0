import csv
import math
from itertools import product

import numpy as np
import pytest

from volseg.exceptions import EmptySurfaceError, ShapeError
from volseg.metrics import (
    MetricRow,
    SurfacePointSet,
    dice_score,
    evaluate_volume,
    evaluate_volumes,
    extract_surface,
    hd95,
    nearest_rank,
    summarize,
    write_metric_report,
)


def brute_force_hd(a, b, percentile=95):
    """All-pairs directed distances with the nearest-rank rule."""

    def directed(source, target):
        distances = sorted(
            min(math.dist(p, q) for q in target) for p in source
        )
        rank = max(math.ceil(percentile / 100 * len(distances)), 1)
        return distances[rank - 1]

    return max(directed(a, b), directed(b, a))


def test_dice_score():
    gt = np.zeros((4, 4, 4), dtype=np.int64)
    pred = np.zeros((4, 4, 4), dtype=np.int64)
    gt[0, 0, :4] = 1
    pred[0, 0, 2:4] = 1
    pred[1, 1, :2] = 1

    assert dice_score(gt, gt, 1) == 1.0
    assert dice_score(pred, gt, 1) == pytest.approx(0.5)
    assert dice_score(pred, gt, 2) == 1.0

    disjoint = np.zeros_like(gt)
    disjoint[3, 3, 3] = 1
    assert dice_score(disjoint, gt, 1) == 0.0


def test_dice_score_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_score(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)), 1)


def test_surface_of_a_single_voxel():
    mask = np.zeros((3, 3, 3), dtype=bool)
    mask[1, 2, 0] = True

    surface = extract_surface(mask)

    assert surface.points.tolist() == [[1, 2, 0]]


def test_surface_of_a_solid_cube():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[1:4, 1:4, 1:4] = True

    surface = extract_surface(mask)

    assert len(surface) == 26
    assert [2, 2, 2] not in surface.points.tolist()


def test_surface_of_a_full_volume_is_the_border_shell():
    surface = extract_surface(np.ones((4, 4, 4), dtype=bool))

    assert len(surface) == 4**3 - 2**3
    assert np.all(np.any((surface.points == 0) | (surface.points == 3), axis=1))


def test_empty_surface():
    assert len(extract_surface(np.zeros((2, 2, 2), dtype=bool))) == 0

    with pytest.raises(ShapeError):
        extract_surface(np.zeros((2, 2), dtype=bool))


@pytest.mark.parametrize(
    "count, expected",
    [(1, 1.0), (20, 19.0), (100, 95.0), (21, 20.0)],
)
def test_nearest_rank(count, expected):
    distances = np.arange(1.0, count + 1)[::-1]

    assert nearest_rank(distances) == expected


def test_hd95_of_identical_surfaces():
    points = SurfacePointSet(np.array([[0, 0, 0], [1, 2, 3], [4, 0, 1]]))

    assert hd95(points, points) == 0.0


def test_hd95_of_two_points_uses_the_spacing():
    a = SurfacePointSet(np.array([[0, 0, 0]]), spacing=(2.0, 1.0, 0.5))
    b = SurfacePointSet(np.array([[1, 2, 4]]), spacing=(2.0, 1.0, 0.5))

    assert hd95(a, b) == pytest.approx(math.sqrt(12))
    assert hd95(a, b, spacing=(1.0, 1.0, 1.0)) == pytest.approx(math.sqrt(21))


@pytest.mark.parametrize("seed", range(50))
def test_hd95_matches_all_pairs(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 20, size=(rng.integers(1, 61), 3))
    b = rng.integers(0, 20, size=(rng.integers(1, 61), 3))

    result = hd95(SurfacePointSet(a), SurfacePointSet(b))

    assert result == pytest.approx(brute_force_hd(a.tolist(), b.tolist()), rel=1e-12)


def test_hd95_is_symmetric_and_bounded_by_hausdorff(rng):
    a = SurfacePointSet(rng.integers(0, 10, size=(30, 3)))
    b = SurfacePointSet(rng.integers(0, 10, size=(25, 3)))

    assert hd95(a, b) == hd95(b, a)
    assert hd95(a, b) <= hd95(a, b, percentile=100)


def test_hd95_of_an_empty_surface():
    points = SurfacePointSet(np.array([[0, 0, 0]]))
    empty = SurfacePointSet(np.zeros((0, 3), dtype=np.int64))

    with pytest.raises(EmptySurfaceError):
        hd95(points, empty)

    with pytest.raises(EmptySurfaceError):
        hd95(empty, points)


@pytest.fixture
def volumes():
    gt = np.zeros((6, 6, 6), dtype=np.int64)
    gt[1:3, 1:3, 1:3] = 1
    gt[4:, 4:, 4:] = 2
    pred = gt.copy()
    pred[1:3, 1:3, 3] = 1
    # class 2 is missed entirely
    pred[pred == 2] = 0
    return [("a", gt.copy(), gt), ("b", pred, gt)]


def test_evaluate_volume(volumes):
    _, pred, gt = volumes[1]

    rows = evaluate_volume("b", pred, gt, num_classes=3)

    assert [(r.volume_id, r.class_id) for r in rows] == [("b", 1), ("b", 2)]
    assert rows[0].dice == pytest.approx(2 * 8 / (12 + 8))
    assert rows[0].hd95 == pytest.approx(1.0)
    assert rows[1].dice == 0.0
    assert math.isnan(rows[1].hd95)


@pytest.mark.parametrize("workers", [1, 3])
def test_evaluate_volumes_keeps_the_order(volumes, workers):
    rows = evaluate_volumes(volumes * 2, num_classes=3, workers=workers)

    assert [r.volume_id for r in rows] == ["a", "a", "b", "b"] * 2
    assert rows[0].dice == 1.0 and rows[0].hd95 == 0.0


def test_summarize_skips_undefined_distances():
    rows = [
        MetricRow("a", 1, 1.0, 0.0),
        MetricRow("b", 1, 0.5, 2.0),
        MetricRow("a", 2, 0.0, math.nan),
    ]

    summary = summarize(rows)

    assert summary["dice_c1"] == pytest.approx(0.75)
    assert summary["hd95_c1"] == pytest.approx(1.0)
    assert summary["dice_c2"] == 0.0
    assert math.isnan(summary["hd95_c2"])
    assert summary["mean_dice"] == pytest.approx(0.5)
    assert summary["mean_hd95"] == pytest.approx(1.0)


def test_write_metric_report(tmp_path):
    rows = [MetricRow("a", 1, 1.0, 0.0), MetricRow("a", 2, 0.25, math.nan)]
    path = tmp_path / "report.csv"

    write_metric_report(rows, path)

    with open(path, newline="") as f:
        lines = list(csv.reader(f))

    assert lines == [
        ["volume_id", "class", "dice", "hd95"],
        ["a", "1", "1.000000", "0.000000"],
        ["a", "2", "0.250000", "nan"],
        ["mean", "all", "0.625000", "0.000000"],
    ]


def test_surface_points_belong_to_the_mask(rng):
    mask = rng.random((6, 5, 4)) > 0.4

    surface = extract_surface(mask)

    padded = np.pad(mask, 1)
    for d, h, w in surface.points:
        assert mask[d, h, w]
        neighbors = [
            padded[d + 1 + dd, h + 1 + dh, w + 1 + dw]
            for dd, dh, dw in product((-1, 0, 1), repeat=3)
            if abs(dd) + abs(dh) + abs(dw) == 1
        ]
        assert not all(neighbors)
