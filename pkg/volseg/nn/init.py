"""Deterministic parameter initializers.

Every initializer draws from the generator it is given; building the same
model twice from generators with the same seed gives bit-identical values.
"""

from math import prod
from typing import Any, Sequence

import numpy as np

from ..autograd import Parameter

DEFAULT_DTYPE = np.float32


def he_normal(
    rng: np.random.Generator,
    shape: Sequence[int],
    fan_in: int,
    name: str = "weight",
    dtype: Any = DEFAULT_DTYPE,
) -> Parameter:
    std = np.sqrt(2.0 / max(fan_in, 1))
    return Parameter(rng.standard_normal(tuple(shape)) * std, name=name, dtype=dtype)


def conv_weight(
    rng: np.random.Generator,
    out_channels: int,
    in_channels: int,
    kernel: Sequence[int],
    dtype: Any = DEFAULT_DTYPE,
) -> Parameter:
    """He-style fan-in normal weight of shape [Cout, Cin, kd, kh, kw]."""
    return he_normal(
        rng,
        (out_channels, in_channels, *kernel),
        fan_in=in_channels * prod(kernel),
        dtype=dtype,
    )


def zeros(
    shape: Sequence[int], name: str = "bias", dtype: Any = DEFAULT_DTYPE
) -> Parameter:
    return Parameter(np.zeros(tuple(shape)), name=name, dtype=dtype)
