"""Desk-scale experiment drivers shared by the scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codec import Codec
from .dataset import Dataset, ToySpec, generate_toy
from .denoiser import DenoiserConfig, DenoiserModel
from .engine import Checkpoint, SampleRequest, TrainConfig, sample_batch, train
from .metrics import ClassifierConfig, frechet_distance, style_accuracy, train_style_classifier
from .schedule import linear_schedule

# Toy training recipe.  On a CPU the cost is per sample, so small batches buy
# more updates for the same time; 1e-4 barely moves the model in that budget.
TOY_TRAIN = TrainConfig(epochs=500, batch_size=4, learning_rate=5e-4, weight_decay=0.01, seed=0, log_every=10)


@dataclass
class ToyRun:
    checkpoint: Checkpoint
    dataset: Dataset
    train_seconds: float
    history: list[float] = field(default_factory=list)


@dataclass
class ToyEvaluation:
    style_accuracy: float
    classifier_heldout: float
    fid: float
    images: np.ndarray
    labels: np.ndarray
    sample_seconds: float


def train_toy(spec: ToySpec | None = None, config: TrainConfig = TOY_TRAIN,
              denoiser: DenoiserConfig | None = None, log=None) -> ToyRun:
    ds = generate_toy(spec or ToySpec())
    vocab = ds.vocabulary()
    codec = Codec("pooled", 2, 4)
    model = DenoiserModel(denoiser or DenoiserConfig(), codec.latent_channels, ds.num_writers, vocab.size)
    start = time.perf_counter()
    ckpt = train(model, ds, config, codec, linear_schedule(1000), vocab, log=log or (lambda line: None))
    return ToyRun(ckpt, ds, time.perf_counter() - start, list(ckpt.history))


def toy_requests(dataset: Dataset, n: int, t_sample: int, seed: int = 0) -> list[SampleRequest]:
    """``n`` requests cycling through writers and words, one seed each."""
    words = sorted(set(dataset.words()))
    return [SampleRequest(words[(i // dataset.num_writers) % len(words)], i % dataset.num_writers,
                          t_sample=t_sample, seed=seed + i) for i in range(n)]


def evaluate_toy(run: ToyRun, n: int = 64, t_sample: int = 1000, seed: int = 0,
                 batch_size: int = 32, classifier: ClassifierConfig | None = None) -> ToyEvaluation:
    clf = train_style_classifier(run.dataset, classifier or ClassifierConfig(), seed=0)
    reqs = toy_requests(run.dataset, n, t_sample, seed)
    start = time.perf_counter()
    images = []
    for s in range(0, n, batch_size):
        images.extend(sample_batch(run.checkpoint, reqs[s:s + batch_size]))
    elapsed = time.perf_counter() - start
    x = np.stack(images).astype(np.float32)
    labels = np.array([r.writer_id for r in reqs])
    real = clf.features(run.dataset.images())
    fake = clf.features(x)
    fid = frechet_distance(real, fake) if fake.n > fake.dim else float("nan")
    return ToyEvaluation(style_accuracy(clf, x, labels), clf.heldout_accuracy, fid, x, labels, elapsed)


def image_grid(images, columns: int, pad: int = 2) -> np.ndarray:
    """Tile (N, 1, H, W) images into one (1, H', W') image on a white background."""
    images = np.asarray(images)
    n, _, h, w = images.shape
    rows = -(-n // columns)
    out = np.ones((rows * (h + pad) + pad, columns * (w + pad) + pad), dtype=np.float32)
    for i, img in enumerate(images):
        r, c = divmod(i, columns)
        out[pad + r * (h + pad):pad + r * (h + pad) + h, pad + c * (w + pad):pad + c * (w + pad) + w] = img[0]
    return out[None]
