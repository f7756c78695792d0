"""Raw volume files.

A file is a fixed little-endian header followed by the payload::

    b"VSEG"  u32 version  u8 kind  u32 channels  u32 D, H, W  f32 spacing × 3

``kind`` 0 is a float32 image and 1 a uint16 label volume; the payload is
the row-major ``[C, D, H, W]`` array, little-endian whatever the host.
"""

import enum
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .exceptions import (
    BadMagicError,
    LengthMismatchError,
    ShapeError,
    TruncatedVolumeError,
    UnsupportedVersionError,
)

log = logging.getLogger(__name__)

MAGIC = b"VSEG"
VERSION = 1

HEADER = struct.Struct("<4sIBI3I3f")


class VolumeKind(enum.IntEnum):
    IMAGE = 0
    LABELS = 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<f4") if self is VolumeKind.IMAGE else np.dtype("<u2")


@dataclass
class Volume:
    data: np.ndarray
    """[C, D, H, W] array, float32 for images and uint16 for labels."""

    kind: VolumeKind = VolumeKind.IMAGE
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.kind = VolumeKind(self.kind)
        if self.data.ndim == 3:
            self.data = self.data[None]
        if self.data.ndim != 4:
            raise ShapeError("Volumes are [C, D, H, W]", self.data.shape)
        if self.kind is VolumeKind.LABELS and self.data.size:
            if self.data.min() < 0 or self.data.max() > np.iinfo(np.uint16).max:
                raise ValueError("Label values do not fit in uint16")
        native = self.kind.dtype.newbyteorder("=")
        self.data = np.ascontiguousarray(self.data, dtype=native)

    @classmethod
    def labels(cls, values: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        spacing = tuple(spacing)
        return cls(np.asarray(values), VolumeKind.LABELS, spacing)  # type: ignore


def encode_volume(volume: Volume) -> bytes:
    c, d, h, w = volume.data.shape
    header = HEADER.pack(MAGIC, VERSION, int(volume.kind), c, d, h, w, *volume.spacing)
    return header + volume.data.astype(volume.kind.dtype, copy=False).tobytes()


def decode_volume(data: bytes) -> Volume:
    """Validate magic, version and length before touching the payload."""
    if len(data) < HEADER.size:
        raise TruncatedVolumeError(
            f"File has {len(data)} bytes, the header alone needs {HEADER.size}"
        )
    magic, version, kind, c, d, h, w, *spacing = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported volume format version {version}")
    try:
        volume_kind = VolumeKind(kind)
    except ValueError:
        raise UnsupportedVersionError(f"Unknown volume kind {kind}")

    expected = c * d * h * w * volume_kind.dtype.itemsize
    actual = len(data) - HEADER.size
    if actual != expected:
        raise LengthMismatchError(
            f"Payload has {actual} bytes, header declares {expected}"
        )
    payload = np.frombuffer(data, dtype=volume_kind.dtype, offset=HEADER.size)
    data_array = payload.reshape(c, d, h, w).copy()
    return Volume(data_array, volume_kind, tuple(spacing))  # type: ignore


def write_volume(path: Union[str, Path], volume: Volume) -> None:
    Path(path).write_bytes(encode_volume(volume))
    log.debug("Wrote %s volume %s to %s", volume.kind.name, volume.data.shape, path)


def read_volume(path: Union[str, Path]) -> Volume:
    return decode_volume(Path(path).read_bytes())
