"""Binary checkpoint format for named float64 tensors.

Layout, all integers little-endian:

    magic   5 bytes  b"HMCD1"
    version u32      currently 1
    mlen    u32      length of the UTF-8 JSON metadata blob
    meta    mlen bytes
    count   u32      number of tensor entries
    entry   repeated count times:
        nlen   u32     tensor name length
        name   nlen bytes, UTF-8
        rank   u32
        dims   rank * u64
        values prod(dims) * f64

The metadata blob is for things that must survive alongside the weights
(architecture fingerprint, dictionary digest, training provenance) without
bloating the tensor table.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import CheckpointError
from .tensor import Tensor

MAGIC = b"HMCD1"
VERSION = 1


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, Tensor | np.ndarray],
    meta: dict | None = None,
) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        # not ascontiguousarray: that would silently promote rank-0 to rank-1
        data = np.asarray(data).astype("<f8", copy=False)
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"checkpoint truncated at byte {self.pos} (wanted {n} more)"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"bad magic; not a {MAGIC.decode()} checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    meta_blob = r.take(r.u32())
    try:
        meta = json.loads(meta_blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank)) if rank else ()
        count = 1
        for d in dims:
            count *= d
        values = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims)
        tensors[name] = values.astype(np.float64)
    if r.pos != len(r.blob):
        raise CheckpointError(f"{len(r.blob) - r.pos} trailing bytes after tensor table")
    return tensors, meta
