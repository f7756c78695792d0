"""Skip-connection gates.

An encoder feature χ is reweighted under the guidance of the upsampled
decoder feature λ of the same shape. The classic attention gate uses a
spatial map only; the spatial-channel parallel gate multiplies it with a
channel map computed from globally pooled features.
"""

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..autograd import Tensor, relu, reshape, sigmoid
from ..exceptions import ShapeError
from ..nn.conv import Conv3dLayer
from ..nn.linear import LinearLayer
from ..nn.module import Module
from ..nn.pooling import global_avg_pool


class GateKind(str, enum.Enum):
    NONE = "none"
    ATTENTION_GATE = "attention_gate"
    SCP_AG = "scp_ag"


@dataclass
class GateMaps:
    spatial: Tensor
    """W_S, [N, 1, D, H, W]."""

    channel: Tensor
    """W_C, [N, C, 1, 1, 1]; all ones for the classic attention gate."""

    fused: Tensor
    """W_SC = W_S ⊗ W_C, [N, C, D, H, W]."""


def intermediate_channels(channels: int) -> int:
    return max(channels // 2, 4)


class AttentionGate(Module):
    """Spatial gate W_S = sigmoid(conv_ψ(relu(conv_χ(χ) + conv_λ(λ))))."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.channels = channels
        f_int = intermediate_channels(channels)
        self.conv_chi = Conv3dLayer(rng, channels, f_int, kernel=1)
        self.conv_lambda = Conv3dLayer(rng, channels, f_int, kernel=1)
        self.conv_psi = Conv3dLayer(rng, f_int, 1, kernel=1)

    def maps(self, chi: Tensor, lam: Tensor) -> GateMaps:
        w_s = spatial_gate(chi, lam, self)
        ones = Tensor(np.ones((chi.shape[0], chi.shape[1], 1, 1, 1), dtype=chi.dtype))
        return GateMaps(spatial=w_s, channel=ones, fused=w_s * ones)

    def forward(self, chi: Tensor, lam: Tensor) -> Tensor:  # type: ignore
        return chi * spatial_gate(chi, lam, self)


class ScpAg(AttentionGate):
    """Spatial-channel parallel attention gate.

    Adds the channel map W_C = sigmoid(linear_χ(avg(χ)) + linear_λ(avg(λ)))
    to the spatial branch; the two linear maps are independent.
    """

    def __init__(self, rng: np.random.Generator, channels: int):
        super().__init__(rng, channels)
        self.linear_chi = LinearLayer(rng, channels, channels)
        self.linear_lambda = LinearLayer(rng, channels, channels)

    def maps(self, chi: Tensor, lam: Tensor) -> GateMaps:
        w_s = spatial_gate(chi, lam, self)
        w_c = channel_gate(chi, lam, self)
        return GateMaps(spatial=w_s, channel=w_c, fused=w_s * w_c)

    def forward(self, chi: Tensor, lam: Tensor) -> Tensor:  # type: ignore
        return scp_ag_apply(chi, lam, self)


def _check_pair(chi: Tensor, lam: Tensor) -> None:
    if chi.ndim != 5 or chi.shape != lam.shape:
        raise ShapeError("Gate inputs must share [N, C, D, H, W]", chi.shape, lam.shape)


def spatial_gate(chi: Tensor, lam: Tensor, params: AttentionGate) -> Tensor:
    _check_pair(chi, lam)
    hidden = relu(params.conv_chi(chi) + params.conv_lambda(lam))
    return sigmoid(params.conv_psi(hidden))


def channel_gate(chi: Tensor, lam: Tensor, params: ScpAg) -> Tensor:
    _check_pair(chi, lam)
    n, c = chi.shape[:2]
    pooled_chi = reshape(global_avg_pool(chi), (n, c))
    pooled_lam = reshape(global_avg_pool(lam), (n, c))
    logits = params.linear_chi(pooled_chi) + params.linear_lambda(pooled_lam)
    return reshape(sigmoid(logits), (n, c, 1, 1, 1))


def scp_ag_apply(chi: Tensor, lam: Tensor, params: ScpAg) -> Tensor:
    """χ ⊗ (W_S ⊗ W_C)."""
    fused = spatial_gate(chi, lam, params) * channel_gate(chi, lam, params)
    return chi * fused


def build_gate(
    kind: Union[GateKind, str], channels: int, rng: np.random.Generator
) -> Optional[AttentionGate]:
    """Gate module for a skip connection, or None when skips pass through."""
    kind = GateKind(kind)
    if kind is GateKind.SCP_AG:
        return ScpAg(rng, channels)
    if kind is GateKind.ATTENTION_GATE:
        return AttentionGate(rng, channels)
    return None
