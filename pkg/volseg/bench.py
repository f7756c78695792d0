"""Forward and backward timing of the heavy operators."""

import enum
import logging
import time
from dataclasses import dataclass
from functools import partial
from math import prod
from typing import Callable, Optional, Sequence, Tuple

import anyio
import numpy as np

from .autograd import Tape, Tensor
from .decoder.blocks import DsaBlock, dsa_forward
from .decoder.deformable import DeformableKernel, deform_conv3d
from .decoder.gates import ScpAg, scp_ag_apply
from .decoder.onsampling import Onsampling, OnsamplingConfig, onsample_forward
from .exceptions import ShapeError
from .nn.conv import Conv3dLayer
from .nn.interpolate import grid_sample_trilinear, trilinear_upsample
from .nn.upsample import TransposedConvUpsampler

log = logging.getLogger(__name__)


class BenchOp(str, enum.Enum):
    CONV3D = "conv3d"
    CONV_TRANSPOSE3D = "conv_transpose3d"
    TRILINEAR_UPSAMPLE = "trilinear_upsample"
    GRID_SAMPLE_TRILINEAR = "grid_sample_trilinear"
    ONSAMPLE_FORWARD = "onsample_forward"
    SCP_AG_APPLY = "scp_ag_apply"
    DEFORM_CONV3D = "deform_conv3d"
    DSA_FORWARD = "dsa_forward"


@dataclass
class BenchResult:
    op: BenchOp
    size: Tuple[int, int, int, int]
    reps: int
    seconds: float
    """Total wall time of every repetition."""

    output_voxels: int
    """Spatial voxels of one output."""

    @property
    def voxels_per_second(self) -> float:
        if self.seconds <= 0:
            return 0.0
        return self.output_voxels * self.reps / self.seconds


def _operator(op: BenchOp, x: Tensor, rng: np.random.Generator) -> Callable[[], Tensor]:
    c = x.shape[1]
    if op is BenchOp.CONV3D:
        conv = Conv3dLayer(rng, c, c, kernel=3)
        return lambda: conv(x)
    if op is BenchOp.CONV_TRANSPOSE3D:
        up = TransposedConvUpsampler(rng, c, 2)
        return lambda: up(x)
    if op is BenchOp.TRILINEAR_UPSAMPLE:
        return lambda: trilinear_upsample(x, 2)
    if op is BenchOp.GRID_SAMPLE_TRILINEAR:
        extent = np.asarray(x.shape[2:], dtype=np.float32)
        coords = Tensor(
            rng.uniform(0, 1, size=(1, *x.shape[2:], 3)) * (extent - 1),
            requires_grad=True,
            dtype=np.float32,
        )
        return lambda: grid_sample_trilinear(x, coords)
    if op is BenchOp.ONSAMPLE_FORWARD:
        onsampling = Onsampling(rng, OnsamplingConfig(in_channels=c))
        return lambda: onsample_forward(x, onsampling.config, onsampling)
    if op is BenchOp.SCP_AG_APPLY:
        gate = ScpAg(rng, c)
        lam = Tensor(rng.standard_normal(x.shape), dtype=np.float32)
        return lambda: scp_ag_apply(x, lam, gate)
    if op is BenchOp.DEFORM_CONV3D:
        kernel = DeformableKernel(rng, c, c)
        return lambda: deform_conv3d(x, kernel)
    block = DsaBlock(rng, c, c)
    return lambda: dsa_forward(x, block)


def _forward_backward(run: Callable[[], Tensor]) -> int:
    with Tape(np.float32) as tape:
        out = run()
        loss = out.sum()
    tape.backward(loss)
    return prod(out.shape[2:])


async def bench_async(
    op: BenchOp,
    size: Sequence[int],
    reps: int = 3,
    seed: int = 0,
    timeout: Optional[float] = None,
) -> BenchResult:
    """Time ``reps`` forward and backward passes on a [1, C, D, H, W] input.

    :raises TimeoutError: when the repetitions take longer than ``timeout``
        seconds; the check happens between repetitions
    """
    op = BenchOp(op)
    if len(size) != 4 or min(size) < 1:
        raise ShapeError("Benchmark size must be C,D,H,W", tuple(size))
    if reps < 1:
        raise ValueError(f"Need at least one repetition, got {reps}")

    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, *size)), requires_grad=True, dtype=np.float32)
    run = _operator(op, x, rng)

    # warm-up, also gives the output extent
    voxels = _forward_backward(run)

    start = time.perf_counter()
    with anyio.fail_after(timeout):
        for rep in range(reps):
            await anyio.to_thread.run_sync(partial(_forward_backward, run))
            log.debug("%s repetition %d done", op.value, rep)
    seconds = time.perf_counter() - start

    return BenchResult(op, tuple(size), reps, seconds, voxels)  # type: ignore


def bench(
    op: BenchOp,
    size: Sequence[int],
    reps: int = 3,
    seed: int = 0,
    timeout: Optional[float] = None,
) -> BenchResult:
    return anyio.run(partial(bench_async, op, size, reps, seed, timeout))

