"""Phantom data, optimizer, schedule, checkpoints and the training loop."""

from .ablation import AblationAxis, run_ablation, variants, write_ablation_report
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .inference import predict_labels, sliding_window_logits
from .optim import AdamW, AdamWState, optimizer_step
from .phantom import PhantomSpec, generate_dataset, generate_phantom, train_val_datasets
from .schedule import ScheduleState, lr_at
from .trainer import EpochRecord, TrainConfig, Trainer

__all__ = [
    "AblationAxis",
    "AdamW",
    "AdamWState",
    "Checkpoint",
    "EpochRecord",
    "PhantomSpec",
    "ScheduleState",
    "TrainConfig",
    "Trainer",
    "generate_dataset",
    "generate_phantom",
    "load_checkpoint",
    "lr_at",
    "optimizer_step",
    "predict_labels",
    "run_ablation",
    "save_checkpoint",
    "sliding_window_logits",
    "train_val_datasets",
    "variants",
    "write_ablation_report",
]
