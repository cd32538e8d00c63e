"""FID-lite (Frechet distance over pluggable features) and writer-style accuracy."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import Dataset
from .errors import ContractError, DimensionError, NumericError, ValidationError
from .nn import Conv2d, GroupNorm, Linear, Module
from .optim import AdamW
from .tensor import Tensor

REPORT_KEYS = ("fid", "style_accuracy", "n_real", "n_generated")


@dataclass
class FeatureSet:
    features: np.ndarray  # (N, D)
    extractor_id: str

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _sym_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureSet, b: FeatureSet, tol: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2)).

    The trace of the matrix square root is taken from the eigenvalues of
    the symmetric product sqrt(C_a) C_b sqrt(C_a), which share their
    spectrum with C_a C_b.  Eigenvalues down to ``-tol`` (relative to the
    largest) are clamped to zero; anything more negative is an error.
    """
    if a.extractor_id != b.extractor_id:
        raise ContractError(f"feature extractors differ: {a.extractor_id!r} vs {b.extractor_id!r}")
    if a.dim != b.dim:
        raise DimensionError(f"feature widths differ: {a.dim} vs {b.dim}")
    for fs in (a, b):
        if fs.n < fs.dim + 1:
            raise ValidationError(f"need at least {fs.dim + 1} samples for {fs.dim}-D features, got {fs.n}")
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    c_a = np.atleast_2d(np.cov(a.features, rowvar=False))
    c_b = np.atleast_2d(np.cov(b.features, rowvar=False))
    s = _sym_sqrt(c_a)
    m = s @ c_b @ s
    eig = np.linalg.eigvalsh((m + m.T) / 2)
    scale = max(1.0, float(np.abs(eig).max(initial=0.0)))
    if eig.min(initial=0.0) < -tol * scale:
        raise NumericError(f"covariance product is indefinite (eigenvalue {eig.min():.3g})")
    tr_sqrt = float(np.sqrt(np.clip(eig, 0.0, None)).sum())
    diff = mu_a - mu_b
    d = float(diff @ diff + np.trace(c_a) + np.trace(c_b) - 2.0 * tr_sqrt)
    if d < -tol * max(1.0, float(np.trace(c_a) + np.trace(c_b))):
        raise NumericError(f"negative Frechet distance {d:.3g}")
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# style classifier
# ---------------------------------------------------------------------------

@dataclass
class ClassifierConfig:
    widths: tuple[int, int, int] = (16, 32, 32)
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 3e-3
    weight_decay: float = 1e-4
    test_fraction: float = 0.25
    # average-pool the input by this factor first; matching the pooled codec's
    # factor makes codec round trips of real images indistinguishable from them
    input_pool: int = 2


class StyleClassifier(Module):
    """Optional input pooling, three stride-2 conv blocks, global average pool, linear head."""

    def __init__(self, num_classes: int, widths=(16, 32, 32), seed: int = 0, dtype=np.float32,
                 input_pool: int = 1):
        if input_pool < 1:
            raise ValidationError(f"input_pool must be >= 1, got {input_pool}")
        self.input_pool = input_pool
        rng = np.random.default_rng(seed)
        c1, c2, c3 = widths
        self.conv1 = Conv2d(rng, 1, c1, 3, stride=2, dtype=dtype)
        self.norm1 = GroupNorm(c1, dtype)
        self.conv2 = Conv2d(rng, c1, c2, 3, stride=2, dtype=dtype)
        self.norm2 = GroupNorm(c2, dtype)
        self.conv3 = Conv2d(rng, c2, c3, 3, stride=2, dtype=dtype)
        self.norm3 = GroupNorm(c3, dtype)
        self.head = Linear(rng, c3, num_classes, dtype)
        self.num_classes = num_classes
        self.train_accuracy = float("nan")
        self.heldout_accuracy = float("nan")

    def embed(self, x: Tensor) -> Tensor:
        if self.input_pool > 1:
            x = T.avg_pool(x, self.input_pool)
        h = T.silu(self.norm1(self.conv1(x)))
        h = T.silu(self.norm2(self.conv2(h)))
        h = T.silu(self.norm3(self.conv3(h)))
        return T.mean(h, axis=(2, 3))

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self.embed(x))

    @property
    def extractor_id(self) -> str:
        h = hashlib.sha1(f"pool={self.input_pool}".encode())
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return f"style-classifier/{h.hexdigest()[:12]}"

    def _batched(self, images, fn, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(images, dtype=np.float32)
        with T.no_grad():
            return np.concatenate([fn(Tensor(x[s:s + batch_size])).data for s in range(0, len(x), batch_size)])

    def features(self, images) -> FeatureSet:
        return FeatureSet(self._batched(images, self.embed), self.extractor_id)

    def predict_proba(self, images) -> np.ndarray:
        logits = self._batched(images, self.logits).astype(np.float64)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, images) -> np.ndarray:
        return self._batched(images, self.logits).argmax(axis=1)


def train_style_classifier(dataset: Dataset, config: ClassifierConfig | None = None,
                           seed: int = 0) -> StyleClassifier:
    """Train on a stratified split of real images and record held-out accuracy."""
    config = config or ClassifierConfig()
    labels = dataset.writer_ids()
    counts = np.bincount(labels, minlength=dataset.num_writers)
    present = counts[counts > 0]
    if len(present) < 2 or present.min() < 2:
        raise ValidationError(f"style classifier needs >= 2 classes with >= 2 samples each, got counts {counts.tolist()}")
    train_ds, test_ds = dataset.split(config.test_fraction, seed)
    x, y = train_ds.images(), train_ds.writer_ids()
    clf = StyleClassifier(dataset.num_writers, config.widths, seed, input_pool=config.input_pool)
    opt = AdamW(clf.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), config.batch_size):
            sel = order[s:s + config.batch_size]
            loss = T.cross_entropy(clf.logits(Tensor(x[sel])), y[sel])
            clf.zero_grad()
            T.backward(loss)
            opt.step()
    clf.train_accuracy = style_accuracy(clf, x, y)
    if len(test_ds):
        clf.heldout_accuracy = style_accuracy(clf, test_ds.images(), test_ds.writer_ids())
    return clf


def style_accuracy(classifier: StyleClassifier, images, labels) -> float:
    """Fraction of images whose predicted writer equals the conditioning writer."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classifier.num_classes):
        raise IndexError(f"label outside [0, {classifier.num_classes})")
    if labels.size == 0:
        return 0.0
    return float(np.mean(classifier.predict(images) == labels))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def format_report(metrics: dict) -> str:
    return "\n".join(f"{k}={metrics[k]}" for k in REPORT_KEYS if k in metrics)


def write_report(metrics: dict, path: str | os.PathLike, config_text: str = "") -> None:
    """Machine-readable summary: the documented keys plus the resolved config."""
    summary = {k: metrics[k] for k in REPORT_KEYS}
    if config_text:
        summary["config"] = config_text
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
