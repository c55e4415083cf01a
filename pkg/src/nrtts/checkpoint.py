"""Single-file checkpoint container.

Layout (all integers little-endian):

    magic   b"NRTC"
    u32     container version (1)
    u32     header length; that many bytes of UTF-8 JSON
    u32     tensor count
    per tensor:
        u16  name length, UTF-8 name
        u8   ndim, then ndim x u32 dims
        f32-LE data, C order

Tensors are stored as 32-bit floats: that is the interchange precision.
Training state is float64 in memory and is cast on save/load, so a frozen
parameter round-trips to identical bytes while any real update is visible
to the bitwise diff.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MissingCheckpointError

MAGIC = b"NRTC"
VERSION = 1


def save_checkpoint(path, header: dict, tensors: dict) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            # note: ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.asarray(tensors[name], dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise InvalidInputError(f"{path}: not an NRTC checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise InvalidInputError(f"{path}: unsupported container version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            tensors[name] = data
    return header, tensors


def diff_checkpoints(path_a, path_b) -> list:
    """Names whose stored bytes differ; raises on incompatible checkpoints."""
    _, ta = load_checkpoint(path_a)
    _, tb = load_checkpoint(path_b)
    if set(ta) != set(tb):
        only_a = sorted(set(ta) - set(tb))
        only_b = sorted(set(tb) - set(ta))
        raise InvalidInputError(
            f"checkpoints carry different tensors (A-only: {only_a[:4]}, "
            f"B-only: {only_b[:4]})")
    changed = []
    for name in sorted(ta):
        a, b = ta[name], tb[name]
        if a.shape != b.shape:
            raise InvalidInputError(f"{name}: shape {a.shape} vs {b.shape}")
        if a.tobytes() != b.tobytes():
            changed.append(name)
    return changed
