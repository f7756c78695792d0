"""Ablation runs: one model variant per row, same seeds and same data."""

import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ..decoder.blocks import DecoderBlockKind
from ..decoder.gates import GateKind
from ..metrics import evaluate_volumes, summarize
from ..model import ModelConfig, build_model
from ..nn.upsample import UpsamplerKind
from .inference import predict_labels
from .trainer import Sample, TrainConfig, Trainer

log = logging.getLogger(__name__)


class AblationAxis(str, enum.Enum):
    UPSAMPLER = "upsampler"
    GATE = "gate"
    DECODER = "decoder"
    MODULES = "modules"


def variants(
    axis: Union[AblationAxis, str], base: ModelConfig
) -> List[Tuple[str, ModelConfig]]:
    """Named configurations of an axis; every other setting comes from ``base``."""
    axis = AblationAxis(axis)
    if axis is AblationAxis.UPSAMPLER:
        return [(kind.value, replace(base, upsampler=kind)) for kind in UpsamplerKind]
    if axis is AblationAxis.GATE:
        return [(kind.value, replace(base, gate=kind)) for kind in GateKind]
    if axis is AblationAxis.DECODER:
        return [
            (kind.value, replace(base, decoder_block=kind))
            for kind in DecoderBlockKind
        ]

    start = replace(
        base,
        upsampler=UpsamplerKind.TRANSPOSED_CONV,
        gate=GateKind.NONE,
        decoder_block=DecoderBlockKind.RESIDUAL,
    )
    with_gate = replace(start, gate=GateKind.SCP_AG)
    with_onsampling = replace(with_gate, upsampler=UpsamplerKind.ONSAMPLING)
    full = replace(with_onsampling, decoder_block=DecoderBlockKind.DSA)
    return [
        ("encoder", start),
        ("+scp_ag", with_gate),
        ("+onsampling", with_onsampling),
        ("+dsa", full),
    ]


@dataclass
class AblationRow:
    variant: str
    config: ModelConfig
    metrics: Dict[str, float] = field(default_factory=dict)


def run_variant(
    name: str,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    out_dir: Path,
    model_seed: int = 0,
) -> AblationRow:
    """Train one variant from scratch and evaluate it on the held-out set."""
    model = build_model(cfg, seed=model_seed)
    Trainer(model, train_cfg, out_dir / name).fit(train_set, val_set)

    volumes = []
    for index, (image, labels) in enumerate(val_set):
        pred = predict_labels(model, image, cfg.patch_size)
        for n in range(pred.shape[0]):
            volumes.append((f"val{index}_{n}", pred[n], labels.values[n]))

    rows = evaluate_volumes(volumes, cfg.num_classes, workers=train_cfg.workers)
    row = AblationRow(name, cfg, summarize(rows))
    log.info(
        "Variant %s (%s): mean dice %.4f",
        name,
        cfg.describe(),
        row.metrics["mean_dice"],
    )
    return row


def run_ablation(
    axis: Union[AblationAxis, str],
    base: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    out_dir: Path,
    model_seed: int = 0,
) -> List[AblationRow]:
    return [
        run_variant(name, cfg, train_cfg, train_set, val_set, out_dir, model_seed)
        for name, cfg in variants(axis, base)
    ]


def report_columns(num_classes: int) -> List[str]:
    classes = range(1, num_classes)
    return (
        ["variant", "upsampler", "gate", "decoder_block"]
        + [f"dice_c{c}" for c in classes]
        + ["mean_dice"]
        + [f"hd95_c{c}" for c in classes]
        + ["mean_hd95"]
    )


def write_ablation_report(
    rows: Sequence[AblationRow], path: Union[str, Path], num_classes: int
) -> None:
    columns = report_columns(num_classes)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            values = [
                row.variant,
                row.config.upsampler.value,
                row.config.gate.value,
                row.config.decoder_block.value,
            ]
            for column in columns[4:]:
                value = row.metrics.get(column, math.nan)
                values.append("nan" if np.isnan(value) else f"{value:.6f}")
            writer.writerow(values)
    log.info("Wrote %d-row ablation report to %s", len(rows), path)
