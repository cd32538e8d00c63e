"""Word-image datasets: IAM-style manifests and procedural toy glyphs.

Manifest format: UTF-8, one record per line, three tab-separated fields
``relative_image_path<TAB>writer_id<TAB>transcription``.  Images are 8-bit
grayscale PGM (P5) or PNG.  Pixels live in [-1, 1] with a white (+1)
background and dark ink.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .conditioning import Vocabulary
from .errors import LoadError, ParseError, ValidationError
from .imageio import from_uint8, read_image, to_uint8, write_pgm

MIN_WORD_LEN = 2
MAX_WORD_LEN = 7
BACKGROUND = 1.0


def keep_word(word: str) -> bool:
    return MIN_WORD_LEN <= len(word) <= MAX_WORD_LEN


@dataclass
class WordRecord:
    image: np.ndarray  # (1, H, W) float32 in [-1, 1]
    writer_id: int
    transcription: str


@dataclass
class Dataset:
    records: list[WordRecord]
    num_writers: int
    # original writer id -> dense id
    writer_map: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def images(self) -> np.ndarray:
        return np.stack([r.image for r in self.records]).astype(np.float32)

    def writer_ids(self) -> np.ndarray:
        return np.array([r.writer_id for r in self.records], dtype=np.int64)

    def words(self) -> list[str]:
        return [r.transcription for r in self.records]

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_words(self.words())

    @property
    def image_size(self) -> tuple[int, int]:
        return self.records[0].image.shape[1:]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.records[i] for i in indices], self.num_writers, dict(self.writer_map))

    def split(self, test_fraction: float = 0.25, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded split stratified by (writer, word)."""
        rng = np.random.default_rng(seed)
        groups: dict[tuple[int, str], list[int]] = {}
        for i, r in enumerate(self.records):
            groups.setdefault((r.writer_id, r.transcription), []).append(i)
        train, test = [], []
        for key in sorted(groups):
            idx = groups[key]
            perm = [idx[j] for j in rng.permutation(len(idx))]
            n_test = int(round(test_fraction * len(idx)))
            if len(idx) > 1:
                n_test = min(max(n_test, 1), len(idx) - 1)
            else:
                n_test = 0
            test.extend(perm[:n_test])
            train.extend(perm[n_test:])
        return self.subset(sorted(train)), self.subset(sorted(test))

    def shuffled_indices(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).permutation(len(self.records))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _resize_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = x.shape[axis]
    if n_in == n_out:
        return x
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1.0 - frac) + np.take(x, hi, axis=axis) * frac


def resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    return _resize_axis(_resize_axis(np.asarray(x, dtype=np.float64), height, 0), width, 1)


def preprocess(image, target_height: int = 64, max_width: int = 256) -> np.ndarray:
    """Scale to a fixed height keeping aspect, then center-pad or squeeze to ``max_width``.

    ``image`` is raw uint8 grayscale (H, W) or an already-normalised float
    image in [-1, 1], (H, W) or (1, H, W).  Returns (1, target_height, max_width).
    """
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValidationError(f"preprocess needs a non-empty 2-D image, got shape {arr.shape}")
    x = from_uint8(arr).astype(np.float64) if arr.dtype == np.uint8 else arr.astype(np.float64)
    h, w = arr.shape
    new_w = max(1, int(math.floor(w * target_height / h + 0.5)))
    x = resize_bilinear(x, target_height, min(new_w, max_width))
    if new_w < max_width:
        left = (max_width - new_w) // 2
        x = np.pad(x, ((0, 0), (left, max_width - new_w - left)), constant_values=BACKGROUND)
    return np.clip(x, -1.0, 1.0).astype(np.float32)[None]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    writer_id: int
    transcription: str
    line: int


def parse_manifest(text: str) -> list[ManifestEntry]:
    entries = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"manifest line {n}: expected 3 tab-separated fields, got {len(fields)}")
        path, wid, word = fields
        try:
            writer = int(wid)
        except ValueError:
            raise ParseError(f"manifest line {n}: writer id {wid!r} is not an integer") from None
        entries.append(ManifestEntry(path, writer, word, n))
    return entries


def load_manifest(path: str | os.PathLike, target_height: int = 64, max_width: int = 256) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    entries = [e for e in parse_manifest(path.read_text(encoding="utf-8")) if keep_word(e.transcription)]
    writer_map = {w: i for i, w in enumerate(sorted({e.writer_id for e in entries}))}
    records = []
    for e in entries:
        img_path = path.parent / e.path
        if not img_path.is_file():
            raise LoadError(f"manifest line {e.line}: image file not found: {img_path}")
        records.append(WordRecord(preprocess(read_image(img_path), target_height, max_width),
                                  writer_map[e.writer_id], e.transcription))
    return Dataset(records, len(writer_map), writer_map)


def write_manifest(dataset: Dataset, root: str | os.PathLike, image_dir: str = "images") -> Path:
    root = Path(root)
    (root / image_dir).mkdir(parents=True, exist_ok=True)
    inverse = {v: k for k, v in dataset.writer_map.items()} or {i: i for i in range(dataset.num_writers)}
    lines = []
    for i, r in enumerate(dataset.records):
        rel = f"{image_dir}/{i:05d}_w{r.writer_id}_{r.transcription}.pgm"
        write_pgm(r.image, root / rel)
        lines.append(f"{rel}\t{inverse[r.writer_id]}\t{r.transcription}")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# toy glyphs
# ---------------------------------------------------------------------------

def _arc(cx, cy, rx, ry, a0, a1, n=12):
    a = np.radians(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(a), cy + ry * np.sin(a)))


# Strokes in em units: x in [0, 1] across the cell, y = 0 baseline,
# y = 1 x-height, ascenders to 1.8, descenders to -0.8.
def _glyphs() -> dict[str, list[list[tuple[float, float]]]]:
    L = lambda *pts: list(pts)  # noqa: E731
    bowl_l = _arc(0.45, 0.5, 0.4, 0.5, 0, 360, 20)
    return {
        "a": [bowl_l, L((0.85, 1.0), (0.85, 0.0))],
        "b": [L((0.1, 1.8), (0.1, 0.0)), _arc(0.5, 0.5, 0.4, 0.5, 0, 360, 20)],
        "c": [_arc(0.55, 0.5, 0.45, 0.5, 45, 315, 16)],
        "d": [bowl_l, L((0.85, 1.8), (0.85, 0.0))],
        "e": [L((0.1, 0.5), (0.9, 0.5)), _arc(0.5, 0.5, 0.4, 0.5, 0, 320, 18)],
        "f": [_arc(0.75, 1.5, 0.3, 0.3, 20, 180, 8), L((0.45, 1.5), (0.45, 0.0)), L((0.15, 1.0), (0.8, 1.0))],
        "g": [bowl_l, L((0.85, 1.0), (0.85, -0.4)), _arc(0.5, -0.4, 0.35, 0.4, 0, -180, 10)],
        "h": [L((0.1, 1.8), (0.1, 0.0)), _arc(0.5, 0.5, 0.4, 0.5, 180, 0, 10), L((0.9, 0.5), (0.9, 0.0))],
        "i": [L((0.5, 1.0), (0.5, 0.0)), L((0.5, 1.4), (0.5, 1.5))],
        "j": [L((0.6, 1.0), (0.6, -0.4)), _arc(0.3, -0.4, 0.3, 0.35, 0, -180, 8), L((0.6, 1.4), (0.6, 1.5))],
        "k": [L((0.1, 1.8), (0.1, 0.0)), L((0.85, 1.0), (0.1, 0.4)), L((0.35, 0.6), (0.9, 0.0))],
        "l": [L((0.5, 1.8), (0.5, 0.0))],
        "m": [L((0.05, 1.0), (0.05, 0.0)), _arc(0.275, 0.6, 0.225, 0.4, 180, 0, 8), L((0.5, 0.6), (0.5, 0.0)),
              _arc(0.725, 0.6, 0.225, 0.4, 180, 0, 8), L((0.95, 0.6), (0.95, 0.0))],
        "n": [L((0.1, 1.0), (0.1, 0.0)), _arc(0.5, 0.5, 0.4, 0.5, 180, 0, 10), L((0.9, 0.5), (0.9, 0.0))],
        "o": [_arc(0.5, 0.5, 0.45, 0.5, 0, 360, 20)],
        "p": [L((0.1, 1.0), (0.1, -0.8)), _arc(0.5, 0.5, 0.4, 0.5, 0, 360, 20)],
        "q": [bowl_l, L((0.85, 1.0), (0.85, -0.8))],
        "r": [L((0.15, 1.0), (0.15, 0.0)), _arc(0.6, 0.5, 0.45, 0.5, 180, 45, 8)],
        "s": [L((0.85, 0.85), (0.6, 1.0), (0.3, 0.95), (0.15, 0.75), (0.3, 0.55), (0.7, 0.45),
                (0.85, 0.25), (0.7, 0.02), (0.4, 0.0), (0.1, 0.15))],
        "t": [L((0.45, 1.6), (0.45, 0.2)), _arc(0.7, 0.2, 0.25, 0.2, 180, 300, 6), L((0.1, 1.0), (0.85, 1.0))],
        "u": [L((0.1, 1.0), (0.1, 0.5)), _arc(0.5, 0.5, 0.4, 0.5, 180, 360, 10), L((0.9, 1.0), (0.9, 0.0))],
        "v": [L((0.05, 1.0), (0.5, 0.0), (0.95, 1.0))],
        "w": [L((0.0, 1.0), (0.25, 0.0), (0.5, 0.8), (0.75, 0.0), (1.0, 1.0))],
        "x": [L((0.1, 1.0), (0.9, 0.0)), L((0.9, 1.0), (0.1, 0.0))],
        "y": [L((0.1, 1.0), (0.5, 0.0)), L((0.9, 1.0), (0.3, -0.8))],
        "z": [L((0.1, 1.0), (0.9, 1.0), (0.1, 0.0), (0.9, 0.0))],
    }


GLYPHS = _glyphs()
TOY_CHARSET = frozenset(GLYPHS)
DEFAULT_TOY_WORDS = ("cool", "ink", "glyph", "style", "word", "pen", "quiet", "maze")


@dataclass(frozen=True)
class StrokeStyle:
    slant: float      # horizontal shear per unit height
    thickness: float  # stroke width in pixels
    wobble: float     # baseline wobble amplitude in pixels
    width: float      # horizontal scale of each glyph cell


# Hand-picked so the first four styles differ in several attributes at once.
_BASE_STYLES = (
    StrokeStyle(-0.35, 1.4, 0.0, 0.80),
    StrokeStyle(0.45, 1.6, 1.5, 1.10),
    StrokeStyle(0.00, 3.0, 0.3, 0.95),
    StrokeStyle(0.10, 1.0, 0.6, 1.30),
)


@dataclass
class ToySpec:
    num_styles: int = 4
    words: tuple[str, ...] = DEFAULT_TOY_WORDS
    height: int = 32
    width: int = 128
    samples_per_pair: int = 4
    seed: int = 7
    styles: tuple[StrokeStyle, ...] | None = None

    def resolved_styles(self) -> tuple[StrokeStyle, ...]:
        if self.styles is not None:
            return tuple(self.styles)
        styles = list(_BASE_STYLES[: self.num_styles])
        rng = np.random.default_rng(self.seed + 1000)
        while len(styles) < self.num_styles:
            styles.append(StrokeStyle(float(rng.uniform(-0.45, 0.45)), float(rng.uniform(1.0, 3.0)),
                                      float(rng.uniform(0.0, 1.5)), float(rng.uniform(0.8, 1.3))))
        return tuple(styles)

    def validate(self) -> None:
        if self.num_styles < 1 or self.samples_per_pair < 1:
            raise ValidationError("num_styles and samples_per_pair must be >= 1")
        if not self.words:
            raise ValidationError("toy spec needs at least one word")
        for w in self.words:
            bad = sorted(set(w) - TOY_CHARSET)
            if bad:
                raise ValidationError(f"toy word {w!r} uses unsupported characters {bad}")
        styles = self.resolved_styles()
        if len(set(styles)) != len(styles):
            raise ValidationError("toy styles must be pairwise distinct")


def _segments(word: str, style: StrokeStyle, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    xh = height / 4.0  # x-height in pixels
    advance = xh * style.width
    gap = 0.35 * xh
    total = len(word) * advance + (len(word) - 1) * gap
    x0 = (width - total) / 2.0 + rng.uniform(-1.0, 1.0)
    baseline = height * 0.70 + rng.uniform(-0.5, 0.5)
    phase = rng.uniform(0, 2 * np.pi)
    segs = []
    for k, ch in enumerate(word):
        cx = x0 + k * (advance + gap) + rng.uniform(-0.3, 0.3)
        for stroke in GLYPHS[ch]:
            p = np.asarray(stroke, dtype=np.float64)
            px = cx + p[:, 0] * advance + style.slant * p[:, 1] * xh
            py = baseline - p[:, 1] * xh
            py = py + style.wobble * np.sin(phase + px * 2 * np.pi / (3.0 * xh))
            pts = np.stack([px, py], axis=1)
            segs.append(np.concatenate([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs)


def render_word(word: str, style: StrokeStyle, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Anti-aliased rasterisation; returns uint8 (H, W), white background."""
    segs = _segments(word, style, height, width, rng)
    thickness = style.thickness * rng.uniform(0.95, 1.05)
    yy, xx = np.mgrid[0:height, 0:width]
    p = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)[:, None, :]
    a, b = segs[None, :, :2], segs[None, :, 2:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    s = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    d = np.sqrt((((a + s[..., None] * ab) - p) ** 2).sum(-1)).min(axis=1)
    ink = np.clip(thickness / 2.0 + 0.5 - d, 0.0, 1.0).reshape(height, width)
    return to_uint8(1.0 - 2.0 * ink)


def generate_toy(spec: ToySpec, out_dir: str | os.PathLike | None = None) -> Dataset:
    """Render every (style, word) pair ``samples_per_pair`` times, deterministically.

    With ``out_dir`` the images and ``manifest.tsv`` are also written there.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    records = []
    for sid, style in enumerate(spec.resolved_styles()):
        for word in spec.words:
            for _ in range(spec.samples_per_pair):
                pix = render_word(word, style, spec.height, spec.width, rng)
                records.append(WordRecord(from_uint8(pix)[None], sid, word))
    ds = Dataset(records, spec.num_styles, {i: i for i in range(spec.num_styles)})
    if out_dir is not None:
        write_manifest(ds, out_dir)
    return ds
