"""Encoder-decoder segmentation network with a deep-supervision head per level.

The encoder is a residual CNN of ``depth`` stages at strides 1, 2, 4, ...
with ``C0·2^stage`` channels. The deepest decoder level refines the last
encoder stage; every other level projects the level below to its own
channel count, upsamples it, gates the matching encoder feature with it and
runs a decoder block on their concatenation.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .autograd import Tensor, concat, relu
from .decoder.blocks import DecoderBlockKind, build_decoder_block
from .decoder.gates import AttentionGate, GateKind, build_gate
from .exceptions import ConfigError, ShapeError
from .nn.conv import Conv3dLayer
from .nn.module import Module
from .nn.upsample import UpsamplerKind, build_upsampler
from .utils import Triple, to_triple

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """Architecture of a segmentation network."""

    base_channels: int = 8
    """Channels C0 of the first encoder stage."""

    depth: int = 5
    """Encoder stages and supervised decoder levels."""

    upsampler: UpsamplerKind = UpsamplerKind.ONSAMPLING
    gate: GateKind = GateKind.SCP_AG
    decoder_block: DecoderBlockKind = DecoderBlockKind.DSA

    num_classes: int = 4
    """Classes including background."""

    in_channels: int = 1

    patch_size: Triple = (48, 48, 48)
    """Training patch extent (D, H, W); every axis divisible by 2^(depth-1)."""

    dsa_literal_residual: bool = False
    """Multiply the attention map with the fused input instead of χ_res."""

    def __post_init__(self):
        self.upsampler = UpsamplerKind(self.upsampler)
        self.gate = GateKind(self.gate)
        self.decoder_block = DecoderBlockKind(self.decoder_block)
        self.patch_size = to_triple(self.patch_size)
        if self.depth < 1:
            raise ConfigError(f"Model depth must be >= 1, got {self.depth}")
        if self.num_classes < 2:
            raise ConfigError(f"Need at least 2 classes, got {self.num_classes}")

    @property
    def stride(self) -> int:
        """Total downsampling factor of the encoder."""
        return 2 ** (self.depth - 1)

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def check_patch(self, extent) -> None:
        if any(e % self.stride for e in extent):
            raise ShapeError(
                f"Patch extents must be divisible by {self.stride}", tuple(extent)
            )

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        for key in ("upsampler", "gate", "decoder_block"):
            values[key] = values[key].value
        values["patch_size"] = list(self.patch_size)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        if "patch_size" in known:
            known["patch_size"] = tuple(known["patch_size"])
        return cls(**known)

    def describe(self) -> str:
        return f"{self.upsampler.value}+{self.gate.value}+{self.decoder_block.value}"


class EncoderStage(Module):
    """Strided entry convolution followed by a two-convolution residual unit."""

    def __init__(
        self, rng: np.random.Generator, in_channels: int, out_channels: int, stride: int
    ):
        self.entry = Conv3dLayer(
            rng, in_channels, out_channels, kernel=3, stride=stride
        )
        self.conv1 = Conv3dLayer(rng, out_channels, out_channels, kernel=3)
        self.conv2 = Conv3dLayer(rng, out_channels, out_channels, kernel=3)

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        h = relu(self.entry(x))
        return relu(self.conv2(relu(self.conv1(h))) + h)


class DecoderLevel(Module):
    """project → upsample → gate(skip, up) → concat → block, plus a head."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, level: int):
        channels = cfg.channels(level)
        self.project = Conv3dLayer(rng, 2 * channels, channels, kernel=1)
        self.upsample = build_upsampler(cfg.upsampler, channels, 2, rng)
        self.gate: Optional[AttentionGate] = build_gate(cfg.gate, channels, rng)
        self.block = build_decoder_block(
            cfg.decoder_block,
            2 * channels,
            channels,
            rng,
            literal_residual=cfg.dsa_literal_residual,
        )
        self.head = Conv3dLayer(
            rng, channels, cfg.num_classes, kernel=1, zero_init=True
        )

    def forward(self, below: Tensor, skip: Tensor) -> Tensor:  # type: ignore
        up = self.upsample(self.project(below))
        gated = skip if self.gate is None else self.gate(skip, up)
        return self.block(concat([gated, up], axis=1))


class BottomLevel(Module):
    """Deepest decoder level: a block on the last encoder feature."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        channels = cfg.channels(cfg.depth - 1)
        self.block = build_decoder_block(
            cfg.decoder_block,
            channels,
            channels,
            rng,
            literal_residual=cfg.dsa_literal_residual,
        )
        self.head = Conv3dLayer(
            rng, channels, cfg.num_classes, kernel=1, zero_init=True
        )

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return self.block(x)


class SegmentationModel(Module):
    """Returns the logits of every level, full resolution first."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self._config = cfg
        self.encoder = [
            EncoderStage(
                rng,
                cfg.in_channels if level == 0 else cfg.channels(level - 1),
                cfg.channels(level),
                stride=1 if level == 0 else 2,
            )
            for level in range(cfg.depth)
        ]
        self.bottom = BottomLevel(rng, cfg)
        self.decoder = [DecoderLevel(rng, cfg, level) for level in range(cfg.depth - 1)]

    @property
    def config(self) -> ModelConfig:
        return self._config

    def forward(self, x: Tensor) -> List[Tensor]:  # type: ignore
        cfg = self._config
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"Model expects [N, {cfg.in_channels}, D, H, W]", x.shape)
        cfg.check_patch(x.shape[2:])

        features = []
        h = x
        for stage in self.encoder:
            h = stage(h)
            features.append(h)

        d = self.bottom(features[-1])
        logits = [self.bottom.head(d)]
        for level in reversed(range(cfg.depth - 1)):
            d = self.decoder[level](d, features[level])
            logits.append(self.decoder[level].head(d))

        logits.reverse()
        return logits

    def pyramid_shapes(self, extent) -> List[Tuple[int, ...]]:
        return [
            tuple(e // 2**level for e in extent) for level in range(self._config.depth)
        ]


def build_model(cfg: ModelConfig, seed: int = 0) -> SegmentationModel:
    """Build a network with deterministic initialization from ``seed``."""
    cfg.check_patch(cfg.patch_size)
    model = SegmentationModel(cfg, np.random.default_rng(seed))
    log.info(
        "Built %s model, depth %d, %d parameters",
        cfg.describe(),
        cfg.depth,
        model.num_parameters(),
    )
    return model
