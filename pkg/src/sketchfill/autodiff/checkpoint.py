"""Checkpoint container: magic "FSCK", then a named float32 tensor table.

Layout, all little-endian:
    bytes 0-3   magic "FSCK"
    u32         version (currently 1)
    u64         step counter
    u32         tensor count
    per tensor: u16 name length, name (utf-8), u8 ndim, u32 per dim, f32 data
Names are written sorted so identical state always produces identical bytes,
which is what lets tests assert resume equality by file hash.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

MAGIC = b"FSCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed checkpoint; the message names the failing byte offset."""


def save_checkpoint(path, arrays: dict, step: int):
    """Write name -> ndarray table atomically (temp file + rename)."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQI", VERSION, step, len(arrays)))
        for name in sorted(arrays):
            raw = name.encode("utf-8")
            arr = np.asarray(arrays[name], dtype="<f4")  # keeps 0-d shapes intact
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read back (step, dict of name -> float32 ndarray)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic at byte 0")
    if len(data) < 20:
        raise CheckpointFormatError(f"{path}: truncated header at byte {len(data)}")
    version, step, count = struct.unpack_from("<IQI", data, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version} at byte 4")
    offset = 20
    arrays = {}
    for i in range(count):
        if len(data) < offset + 2:
            raise CheckpointFormatError(f"{path}: tensor {i} name length truncated at byte {offset}")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if len(data) < offset + name_len + 1:
            raise CheckpointFormatError(f"{path}: tensor {i} header truncated at byte {offset}")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        if len(data) < offset + 4 * ndim:
            raise CheckpointFormatError(f"{path}: {name}: dims truncated at byte {offset}")
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if len(data) < offset + 4 * n:
            raise CheckpointFormatError(f"{path}: {name}: data truncated at byte {offset}")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        arrays[name] = arr.copy()
        offset += 4 * n
    if offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - offset} trailing bytes at byte {offset}")
    return step, arrays


def checkpoint_hash(path) -> str:
    """sha256 of the file, reported by the service health endpoint."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
