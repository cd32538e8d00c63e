"""Grayscale image files: binary PGM (read/write) and PNG (read/write via Pillow)."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import FormatError, LoadError
from .tensor import Tensor


def to_uint8(image) -> np.ndarray:
    """[-1, 1] floats -> bytes with round-half-up of 255 * (x + 1) / 2."""
    x = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    return np.clip(np.floor(255.0 * (x + 1.0) / 2.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0).astype(np.float32)


def _plane(image) -> np.ndarray:
    arr = to_uint8(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2 or 0 in arr.shape:
        raise FormatError(f"expected a (1, H, W) or (H, W) image, got shape {arr.shape}")
    return arr


def pgm_bytes(image) -> bytes:
    arr = _plane(image)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def write_pgm(image, path: str | os.PathLike) -> None:
    data = pgm_bytes(image)
    with open(path, "wb") as fh:
        fh.write(data)


def write_png(image, path: str | os.PathLike) -> None:
    from PIL import Image

    Image.fromarray(_plane(image), mode="L").save(path)


def parse_pgm(blob: bytes) -> np.ndarray:
    """Binary 8-bit PGM -> uint8 array (H, W).  Header comments are allowed."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"unsupported PGM magic {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    pos += 1
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos) if len(blob) - pos >= w * h else None
    if data is None:
        raise FormatError("truncated PGM pixel data")
    return data.reshape(h, w).copy()


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PGM or PNG file as uint8 (H, W)."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"image file not found: {path}")
    blob = path.read_bytes()
    if blob[:2] == b"P5":
        return parse_pgm(blob)
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    raise FormatError(f"{path}: not a binary PGM or PNG file")
