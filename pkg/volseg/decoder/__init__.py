"""Decoder mechanisms: onsampling, skip gates, deformable convolution and blocks."""

from .blocks import (
    BasicBlock,
    DecoderBlockKind,
    DsaBlock,
    ResidualBlock,
    build_decoder_block,
    dsa_forward,
)
from .deformable import DeformableKernel, deform_conv3d
from .gates import (
    AttentionGate,
    GateKind,
    GateMaps,
    ScpAg,
    build_gate,
    channel_gate,
    scp_ag_apply,
    spatial_gate,
)
from .onsampling import (
    CoordinateGrid,
    GridRole,
    NeighborhoodWeights,
    OffsetGradient,
    Onsampling,
    OnsamplingConfig,
    base_grid,
    gather_neighborhood,
    offset_branch,
    onsample_forward,
    weight_branch,
    weighted_sum,
)

__all__ = [
    "AttentionGate",
    "BasicBlock",
    "CoordinateGrid",
    "DecoderBlockKind",
    "DeformableKernel",
    "DsaBlock",
    "GateKind",
    "GateMaps",
    "GridRole",
    "NeighborhoodWeights",
    "OffsetGradient",
    "Onsampling",
    "OnsamplingConfig",
    "ResidualBlock",
    "ScpAg",
    "base_grid",
    "build_decoder_block",
    "build_gate",
    "channel_gate",
    "deform_conv3d",
    "dsa_forward",
    "gather_neighborhood",
    "offset_branch",
    "onsample_forward",
    "scp_ag_apply",
    "spatial_gate",
    "weight_branch",
    "weighted_sum",
]
