"""Utilities to manipulate shapes, seeds and triples."""

from typing import Sequence, Tuple, Union

import numpy as np

Triple = Tuple[int, int, int]


def to_triple(value: Union[int, Sequence[int]]) -> Triple:
    """Expand an int into an isotropic (d, h, w) triple."""
    if isinstance(value, (int, np.integer)):
        return (int(value), int(value), int(value))
    d, h, w = value
    return (int(d), int(h), int(w))


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent generator from a seed and a path of integer keys.

    The same (seed, keys) always yields the same stream, whatever the
    order in which generators are created.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def parse_int_list(value_str: str) -> Tuple[int, ...]:
    """Convert a comma separated string like ``"8,32,32,32"`` into ints.

    Raise a ValueError on an empty item or a non integer.
    """
    items = [item.strip() for item in value_str.split(",")]
    if not items or any(item == "" for item in items):
        raise ValueError(f"Invalid integer list: {value_str}")
    return tuple(int(item) for item in items)
