"""Versioned binary checkpoint container.

Layout, all integers little-endian::

    b"VSKP"  u32 version
    section × 4 (parameters, optimizer, schedule, extra)
        u32 blob count
        blob × count
            u32 name length, utf-8 name
            u8 dtype tag, u8 rank, u64 × rank extents
            payload, little-endian row-major

The optimizer section holds ``step`` and one ``m/<name>`` and ``v/<name>``
blob per parameter; the schedule section holds ``e_cur``, ``e_warmup``,
``e_max`` and ``l_initial``. The extra section carries the model
configuration as a ``config`` blob of utf-8 JSON bytes.
"""

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Tuple, Union

import numpy as np

from ..exceptions import CheckpointError
from .optim import AdamWState
from .schedule import ScheduleState

log = logging.getLogger(__name__)

MAGIC = b"VSKP"
VERSION = 1

DTYPE_TAGS = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("u1"),
}
TAG_OF = {dtype.newbyteorder("="): tag for tag, dtype in DTYPE_TAGS.items()}

Section = List[Tuple[str, np.ndarray]]


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    optimizer: AdamWState
    schedule: ScheduleState
    config: Dict[str, Any] = field(default_factory=dict)


def _write_section(stream: BinaryIO, blobs: Section) -> None:
    stream.write(struct.pack("<I", len(blobs)))
    for name, array in blobs:
        array = np.asarray(array)
        tag = TAG_OF.get(array.dtype.newbyteorder("="))
        if tag is None:
            raise CheckpointError(f"Cannot store {name} of dtype {array.dtype}")
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<BB", tag, array.ndim))
        stream.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        stream.write(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError("Truncated checkpoint")
    return data


def _read_section(stream: BinaryIO) -> Section:
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    blobs = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(stream, 4))
        name = _read_exact(stream, name_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", _read_exact(stream, 2))
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"Unknown dtype tag {tag} for {name}")
        shape = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank))
        dtype = DTYPE_TAGS[tag]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = np.frombuffer(_read_exact(stream, size), dtype=dtype)
        blobs.append((name, payload.reshape(shape).astype(dtype.newbyteorder("="))))
    return blobs


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    stream = io.BytesIO()
    stream.write(MAGIC)
    stream.write(struct.pack("<I", VERSION))

    _write_section(stream, list(checkpoint.params.items()))

    step = np.asarray(checkpoint.optimizer.step, dtype=np.int64)
    optimizer: Section = [("step", step)]
    optimizer += [(f"m/{name}", m) for name, m in checkpoint.optimizer.m.items()]
    optimizer += [(f"v/{name}", v) for name, v in checkpoint.optimizer.v.items()]
    _write_section(stream, optimizer)

    schedule = checkpoint.schedule
    _write_section(
        stream,
        [
            ("e_cur", np.asarray(schedule.e_cur, dtype=np.int64)),
            ("e_warmup", np.asarray(schedule.e_warmup, dtype=np.int64)),
            ("e_max", np.asarray(schedule.e_max, dtype=np.int64)),
            ("l_initial", np.asarray(schedule.l_initial, dtype=np.float64)),
        ],
    )

    config = json.dumps(checkpoint.config, sort_keys=True).encode("utf-8")
    _write_section(stream, [("config", np.frombuffer(config, dtype=np.uint8))])
    return stream.getvalue()


def decode_checkpoint(data: bytes) -> Checkpoint:
    stream = io.BytesIO(data)
    if _read_exact(stream, 4) != MAGIC:
        raise CheckpointError("Not a checkpoint: bad magic")
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")

    params = dict(_read_section(stream))

    state = AdamWState()
    for name, value in _read_section(stream):
        if name == "step":
            state.step = int(value)
        elif name.startswith("m/"):
            state.m[name[2:]] = value
        elif name.startswith("v/"):
            state.v[name[2:]] = value
        else:
            raise CheckpointError(f"Unexpected optimizer entry {name}")

    schedule_values = dict(_read_section(stream))
    try:
        schedule = ScheduleState(
            e_cur=int(schedule_values["e_cur"]),
            e_warmup=int(schedule_values["e_warmup"]),
            e_max=int(schedule_values["e_max"]),
            l_initial=float(schedule_values["l_initial"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"Missing schedule entry {exc}") from exc

    extra = dict(_read_section(stream))
    config: Dict[str, Any] = {}
    if "config" in extra:
        config = json.loads(extra["config"].tobytes().decode("utf-8"))

    if stream.read(1):
        raise CheckpointError("Trailing bytes after the last section")

    return Checkpoint(params, state, schedule, config)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    """Write atomically: an interrupted save keeps the previous file intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    os.replace(tmp, path)
    log.info("Saved checkpoint at epoch %d to %s", checkpoint.schedule.e_cur, path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
