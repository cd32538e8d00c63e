"""Named-tensor container ("GDF1") used for checkpoints.

Layout, all integers little-endian::

    b"GDF1"
    u32 metadata length, then that many bytes of UTF-8 JSON
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 ndim, u32 extent * ndim,
                float32 values in row-major order
"""
from __future__ import annotations

import io
import json
import os
import struct
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"GDF1"


def dumps(tensors: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise FormatError(f"not a GDF1 container (header {blob[:4]!r})")
    view = memoryview(blob)
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError("truncated GDF1 container")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (meta_len,) = take("<I")
    metadata = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8")) if meta_len else {}
    pos += meta_len
    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        if pos + 4 * n > len(blob):
            raise FormatError(f"truncated data for tensor {name!r}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * n
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after GDF1 payload")
    return tensors, metadata


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors, metadata))


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
