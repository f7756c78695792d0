"""Training loop with deep supervision, AdamW and a warm-up cosine schedule.

Everything random in an epoch is derived from ``(seed, epoch)``, so a run
resumed from the checkpoint of epoch ``e`` is identical to an
uninterrupted run from epoch ``e`` on.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Tape, Tensor
from ..exceptions import ConfigError, NonFiniteError, ShapeError
from ..losses import LabelVolume, SupervisionPyramid, total_loss
from ..metrics import dice_score
from ..model import SegmentationModel
from ..utils import child_rng
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .inference import predict_labels
from .optim import AdamW
from .phantom import stack_batch
from .schedule import ScheduleState, lr_at

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.vskp"
LOG_NAME = "train_log.csv"

Sample = Tuple[Tensor, LabelVolume]


@dataclass
class TrainConfig:
    """Optimization settings."""

    epochs: int = 200
    batch_size: int = 2
    l_initial: float = 3e-4
    e_warmup: int = 50
    e_max: Optional[int] = None
    """Length of the cosine schedule; ``epochs`` by default."""

    weight_decay: float = 3e-5
    seed: int = 0
    """Seed of the per-epoch shuffling and cropping."""

    train_samples: int = 8
    val_samples: int = 2
    workers: int = 1

    def __post_init__(self):
        if self.e_max is None:
            self.e_max = self.epochs
        if self.e_max < self.epochs:
            raise ConfigError(
                f"Schedule length {self.e_max} is shorter than {self.epochs} epochs"
            )
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be >= 1, got {self.batch_size}")

    def schedule(self, e_cur: int = 0) -> ScheduleState:
        assert self.e_max is not None
        return ScheduleState(
            e_cur=e_cur,
            e_warmup=self.e_warmup,
            e_max=self.e_max,
            l_initial=self.l_initial,
        )


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    total_loss: float
    dice: List[float] = field(default_factory=list)
    """Held-out dice of every foreground class."""

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice)) if self.dice else math.nan


def random_crop(
    sample: Sample, patch: Sequence[int], rng: np.random.Generator
) -> Sample:
    image, labels = sample
    extent = image.shape[2:]
    if any(e < p for e, p in zip(extent, patch)):
        raise ShapeError(f"Volume smaller than the patch {tuple(patch)}", extent)
    start = [int(rng.integers(0, e - p + 1)) for e, p in zip(extent, patch)]
    region = tuple(slice(s, s + p) for s, p in zip(start, patch))
    return (
        Tensor(image.data[(slice(None), slice(None)) + region]),
        LabelVolume(labels.values[(slice(None),) + region], labels.num_classes),
    )


def evaluate_dice(
    model: SegmentationModel, samples: Sequence[Sample]
) -> List[float]:
    """Mean held-out dice of every foreground class."""
    num_classes = model.config.num_classes
    scores: Dict[int, List[float]] = {c: [] for c in range(1, num_classes)}
    for image, labels in samples:
        pred = predict_labels(model, image, model.config.patch_size)
        for n in range(pred.shape[0]):
            for c in scores:
                scores[c].append(dice_score(pred[n], labels.values[n], c))
    return [float(np.mean(scores[c])) for c in sorted(scores)]


class Trainer:
    """Owns the model, the optimizer and the schedule of one training run.

    :param model: the network, float32
    :param config: optimization settings
    :param out_dir: directory of the checkpoint and of the CSV log
    :param model_config: JSON-able model description stored in checkpoints
    """

    def __init__(
        self,
        model: SegmentationModel,
        config: TrainConfig,
        out_dir: Path,
        model_config: Optional[Dict] = None,
    ):
        self.model = model
        self.config = config
        self.out_dir = Path(out_dir)
        if model_config is None:
            model_config = model.config.to_dict()
        self.model_config = model_config
        self.optimizer = AdamW(
            list(model.named_parameters()), weight_decay=config.weight_decay
        )
        self.schedule = config.schedule()
        self.history: List[EpochRecord] = []

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT_NAME

    @property
    def log_path(self) -> Path:
        return self.out_dir / LOG_NAME

    def resume(self) -> int:
        """Restore parameters, optimizer and schedule; returns the next epoch."""
        checkpoint = load_checkpoint(self.checkpoint_path)
        self.model.load_state_dict(checkpoint.params)
        self.optimizer.state = checkpoint.optimizer
        self.schedule = checkpoint.schedule
        log.info(
            "Resuming from %s at epoch %d", self.checkpoint_path, self.schedule.e_cur
        )
        return self.schedule.e_cur

    def save(self) -> None:
        save_checkpoint(
            Checkpoint(
                params=self.model.state_dict(),
                optimizer=self.optimizer.state,
                schedule=self.schedule,
                config=self.model_config,
            ),
            self.checkpoint_path,
        )

    def train_step(self, batch: Sample, lr: float, epoch: int) -> float:
        image, labels = batch
        self.optimizer.zero_grad()
        with Tape(np.float32) as tape:
            pyramid = SupervisionPyramid.build(self.model(image), labels)
            loss = total_loss(pyramid)

        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteError(
                f"Non-finite loss {value} at epoch {epoch}", epoch=epoch
            )

        log.debug("Epoch %d batch loss %.6f (%d tape records)", epoch, value, len(tape))
        tape.backward(loss)
        self.optimizer.step(lr)
        return value

    def run_epoch(self, epoch: int, train_set: Sequence[Sample]) -> Tuple[float, float]:
        self.schedule.e_cur = epoch
        lr = lr_at(self.schedule)
        rng = child_rng(self.config.seed, epoch)
        order = rng.permutation(len(train_set))
        patch = self.model.config.patch_size

        losses = []
        for start in range(0, len(order), self.config.batch_size):
            batch = [
                random_crop(train_set[i], patch, rng)
                for i in order[start : start + self.config.batch_size]
            ]
            losses.append(self.train_step(stack_batch(batch), lr, epoch))
        return lr, float(np.mean(losses))

    def fit(
        self,
        train_set: Sequence[Sample],
        val_set: Sequence[Sample],
        resume: bool = False,
    ) -> List[EpochRecord]:
        """Train up to ``config.epochs``, checkpointing after every epoch.

        A non-finite loss aborts the run; the checkpoint of the last good
        epoch stays on disk.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        first = self.resume() if resume else 0

        for epoch in range(first, self.config.epochs):
            try:
                lr, loss = self.run_epoch(epoch, train_set)
            except NonFiniteError:
                log.warning(
                    "Training diverged at epoch %d; keeping %s",
                    epoch,
                    self.checkpoint_path,
                )
                raise

            record = EpochRecord(epoch, lr, loss, evaluate_dice(self.model, val_set))
            self.history.append(record)
            self._append_log(record)
            log.info(
                "Epoch %d: lr=%.6g loss=%.6f mean dice=%.4f",
                epoch,
                lr,
                loss,
                record.mean_dice,
            )

            self.schedule.e_cur = epoch + 1
            self.save()

        return self.history

    def _append_log(self, record: EpochRecord) -> None:
        classes = self.model.config.num_classes
        new_file = not self.log_path.exists() or record.epoch == 0
        with open(self.log_path, "w" if new_file else "a", newline="") as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(
                    ["epoch", "lr", "total_loss"]
                    + [f"dice_c{c}" for c in range(1, classes)]
                    + ["mean_dice"]
                )
            writer.writerow(
                [record.epoch, f"{record.lr:.8g}", f"{record.total_loss:.8f}"]
                + [f"{d:.6f}" for d in record.dice]
                + [f"{record.mean_dice:.6f}"]
            )


def read_training_log(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
