import numpy as np

from ..autograd import Tensor, linear
from .init import he_normal, zeros
from .module import Module


class LinearLayer(Module):
    """y = x·Wᵀ + b on [N, Cin] inputs."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_features: int,
        out_features: int,
        bias: bool = True,
    ):
        self.weight = he_normal(rng, (out_features, in_features), fan_in=in_features)
        if bias:
            self.bias = zeros((out_features,))

    def forward(self, x: Tensor) -> Tensor:  # type: ignore
        return linear(x, self.weight, getattr(self, "bias", None))
