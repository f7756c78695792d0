"""Synthetic multi-class phantom volumes.

Every phantom holds three foreground structures drawn in priority order
(later classes overwrite earlier ones): a large ellipsoid organ, a thin
spherical shell and a small blob, on background. Class intensities are
Gaussian, then the whole image gets additive noise and is z-score
normalized.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import List, Sequence, Tuple

import anyio
import numpy as np

from ..autograd import Tensor
from ..exceptions import ShapeError
from ..losses import LabelVolume
from ..utils import Triple, to_triple

log = logging.getLogger(__name__)

MIN_EXTENT = 32

BACKGROUND, ORGAN, SHELL, BLOB = range(4)


@dataclass
class PhantomSpec:
    """Recipe of a phantom; the same spec always yields the same volume."""

    seed: int = 0
    extent: Triple = (48, 48, 48)

    intensity_means: Tuple[float, ...] = (0.0, 1.0, 2.0, -1.5)
    """Mean intensity per class, background first."""

    intensity_stds: Tuple[float, ...] = (0.2, 0.2, 0.2, 0.2)
    noise_std: float = 0.3

    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    num_classes: int = field(default=4, init=False)

    def __post_init__(self):
        self.extent = to_triple(self.extent)
        if min(self.extent) < MIN_EXTENT:
            raise ShapeError(
                f"Phantom extent must be at least {MIN_EXTENT}³", self.extent
            )
        if len(self.intensity_means) != self.num_classes or len(
            self.intensity_stds
        ) != self.num_classes:
            raise ValueError(f"Need {self.num_classes} class intensities")

    def for_sample(self, index: int) -> "PhantomSpec":
        """Spec of sample ``index`` of a dataset seeded by this spec."""
        derived = np.random.SeedSequence([self.seed, index]).generate_state(1)[0]
        return replace(self, seed=int(derived))


def _grid(extent: Triple) -> np.ndarray:
    axes = [np.arange(e, dtype=np.float64) for e in extent]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1)


def _ellipsoid(points: np.ndarray, center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return (((points - center) / radii) ** 2).sum(axis=-1) <= 1.0


def generate_labels(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    extent = np.asarray(spec.extent, dtype=np.float64)
    points = _grid(spec.extent)
    labels = np.zeros(spec.extent, dtype=np.int64)

    center = extent / 2 + rng.uniform(-0.08, 0.08, 3) * extent
    radii = extent * rng.uniform(0.22, 0.3, 3)
    labels[_ellipsoid(points, center, radii)] = ORGAN

    # shell inside one octant so that it stays clear of the borders
    radius = float(extent.min() * rng.uniform(0.12, 0.16))
    shell_center = extent * rng.uniform(0.3, 0.7, 3)
    distance = np.linalg.norm(points - shell_center, axis=-1)
    labels[np.abs(distance - radius) <= 1.0] = SHELL

    blob_radius = float(rng.uniform(2.5, 4.0))
    blob_center = extent * rng.uniform(0.2, 0.8, 3)
    labels[np.linalg.norm(points - blob_center, axis=-1) <= blob_radius] = BLOB

    return labels


def generate_phantom(spec: PhantomSpec) -> Tuple[Tensor, LabelVolume]:
    """Image [1, 1, D, H, W] (float32, z-scored) and labels [1, D, H, W]."""
    rng = np.random.default_rng(spec.seed)
    labels = generate_labels(spec, rng)

    means = np.asarray(spec.intensity_means)[labels]
    stds = np.asarray(spec.intensity_stds)[labels]
    image = means + stds * rng.standard_normal(spec.extent)
    image += spec.noise_std * rng.standard_normal(spec.extent)
    image = (image - image.mean()) / image.std()

    return (
        Tensor(image[None, None], dtype=np.float32),
        LabelVolume(labels[None], spec.num_classes),
    )


async def generate_dataset_async(
    spec: PhantomSpec, count: int, workers: int = 1
) -> List[Tuple[Tensor, LabelVolume]]:
    """Phantoms ``spec.for_sample(0 .. count-1)``, ordered by sample index."""
    limiter = anyio.CapacityLimiter(max(workers, 1))
    samples: List[Tuple[Tensor, LabelVolume]] = [None] * count  # type: ignore

    async def make(index: int) -> None:
        samples[index] = await anyio.to_thread.run_sync(
            generate_phantom, spec.for_sample(index), limiter=limiter
        )

    async with anyio.create_task_group() as tg:
        for index in range(count):
            tg.start_soon(make, index)

    log.debug("Generated %d phantoms of extent %s", count, spec.extent)
    return samples


def generate_dataset(
    spec: PhantomSpec, count: int, workers: int = 1
) -> List[Tuple[Tensor, LabelVolume]]:
    return anyio.run(partial(generate_dataset_async, spec, count, workers))


def stack_batch(
    samples: Sequence[Tuple[Tensor, LabelVolume]]
) -> Tuple[Tensor, LabelVolume]:
    """Concatenate samples along the batch axis."""
    images = np.concatenate([image.data for image, _ in samples], axis=0)
    labels = np.concatenate([label.values for _, label in samples], axis=0)
    return Tensor(images), LabelVolume(labels, samples[0][1].num_classes)


def train_val_datasets(
    spec: PhantomSpec, train_count: int, val_count: int, workers: int = 1
) -> Tuple[List[Tuple[Tensor, LabelVolume]], List[Tuple[Tensor, LabelVolume]]]:
    """Disjoint training and held-out phantoms of one dataset seed."""
    samples = generate_dataset(spec, train_count + val_count, workers)
    return samples[:train_count], samples[train_count:]
