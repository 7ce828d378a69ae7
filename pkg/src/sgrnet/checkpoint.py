"""Binary parameter container.

Layout (all integers little-endian)::

    b"SGRM" | u32 version | u32 entry count
    per entry: u16 name length | name (utf-8) | u8 rank | u32 extent * rank | f32 values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError

MAGIC = b"SGRM"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise IngestionError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", buf, pos)
        pos += 8
        if version != VERSION:
            raise IngestionError(f"{path}: unsupported checkpoint version {version} at byte 4")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos: pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise IngestionError(f"{path}: entry {name!r} truncated at byte {pos}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise IngestionError(f"{path}: truncated header near byte {pos}") from exc
    if pos != len(buf):
        raise IngestionError(f"{path}: {len(buf) - pos} trailing bytes after byte {pos}")
    return out
