import pytest

from volseg.bench import BenchOp, bench
from volseg.exceptions import ShapeError


@pytest.mark.parametrize(
    "op, voxels",
    [
        (BenchOp.CONV3D, 4**3),
        (BenchOp.CONV_TRANSPOSE3D, 8**3),
        (BenchOp.TRILINEAR_UPSAMPLE, 8**3),
        (BenchOp.GRID_SAMPLE_TRILINEAR, 4**3),
        (BenchOp.ONSAMPLE_FORWARD, 8**3),
        (BenchOp.SCP_AG_APPLY, 4**3),
        (BenchOp.DEFORM_CONV3D, 4**3),
        (BenchOp.DSA_FORWARD, 4**3),
    ],
)
def test_bench(op, voxels):
    result = bench(op, (2, 4, 4, 4), reps=2)

    assert result.op is op
    assert result.size == (2, 4, 4, 4)
    assert result.reps == 2
    assert result.output_voxels == voxels
    assert result.seconds > 0
    assert result.voxels_per_second > 0


def test_bench_accepts_op_names():
    assert bench("trilinear_upsample", (1, 2, 2, 2), reps=1).op is (
        BenchOp.TRILINEAR_UPSAMPLE
    )


@pytest.mark.parametrize("size", [(4, 4, 4), (2, 4, 4, 4, 4), (0, 4, 4, 4)])
def test_bench_size_errors(size):
    with pytest.raises(ShapeError):
        bench(BenchOp.CONV3D, size)


def test_bench_needs_a_repetition():
    with pytest.raises(ValueError, match="repetition"):
        bench(BenchOp.CONV3D, (1, 4, 4, 4), reps=0)


def test_unknown_op():
    with pytest.raises(ValueError):
        bench("maxpool3d", (1, 4, 4, 4))


def test_bench_timeout():
    with pytest.raises(TimeoutError):
        bench(BenchOp.DSA_FORWARD, (4, 8, 8, 8), reps=20, timeout=1e-6)
