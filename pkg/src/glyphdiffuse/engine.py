"""Training objective, AdamW training loop, truncated ancestral sampling and
style interpolation."""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import container
from . import tensor as T
from .codec import Codec
from .conditioning import StyleTable, Vocabulary, tokenize_batch
from .dataset import Dataset, keep_word
from .denoiser import DenoiserConfig, DenoiserModel
from .errors import NumericError, ValidationError, VocabularyError
from .imageio import write_pgm
from .optim import AdamW
from .schedule import Schedule, posterior_step, q_sample
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValidationError(
                f"invalid train config: epochs={self.epochs} batch_size={self.batch_size} "
                f"learning_rate={self.learning_rate}")


# Full-scale values used for the IAM runs; recorded, never a default.
FULL_SCALE_TRAIN = TrainConfig(epochs=1000, batch_size=224, learning_rate=1e-4)


@dataclass
class Batch:
    images: np.ndarray | None
    writer_ids: np.ndarray
    tokens: np.ndarray
    latents: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.writer_ids)


class NoisePredictor(Protocol):
    def text_context(self, tokens) -> Tensor: ...

    def predict_noise(self, z_t, t, style_ids, context: Tensor, style_vectors: Tensor | None = None) -> Tensor: ...


def training_loss(batch: Batch, model: NoisePredictor, schedule: Schedule, codec: Codec,
                  rng: np.random.Generator) -> Tensor:
    """Mean squared error between drawn noise and the model's prediction."""
    if len(batch) == 0:
        raise ValidationError("training_loss needs a non-empty batch")
    z0 = batch.latents if batch.latents is not None else codec.to_latent(batch.images)
    n = len(batch)
    t = rng.integers(1, schedule.T + 1, size=n)
    eps = rng.standard_normal(z0.shape).astype(z0.dtype)
    z_t = q_sample(Tensor(z0), t, Tensor(eps), schedule)
    context = model.text_context(batch.tokens)
    pred = model.predict_noise(z_t, t, batch.writer_ids, context)
    return T.mse_loss(pred, Tensor(eps))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: DenoiserModel
    codec: Codec
    vocab: Vocabulary
    schedule: Schedule
    image_size: tuple[int, int]
    run_config: str = ""
    history: list[float] = field(default_factory=list)
    writer_map: dict[int, int] = field(default_factory=dict)

    def metadata(self) -> dict:
        m = self.model
        codec_meta, _ = self.codec.state()
        return {
            "format": "glyphdiffuse-checkpoint/1",
            "denoiser": asdict(m.config),
            "model": {"in_channels": m.in_channels, "num_writers": m.num_writers, "vocab_size": m.vocab_size},
            "codec": codec_meta,
            "vocab": self.vocab.to_dict(),
            "schedule": self.schedule.to_dict(),
            "image_size": list(self.image_size),
            "run_config": self.run_config,
            "history": [float(h) for h in self.history],
            "writer_map": {str(k): v for k, v in self.writer_map.items()},
        }

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        out.update(self.codec.state()[1])
        return out

    def to_bytes(self) -> bytes:
        return container.dumps(self.tensors(), self.metadata())

    def save(self, path: str | os.PathLike) -> None:
        blob = self.to_bytes()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        tensors, meta = container.loads(blob)
        dcfg = dict(meta["denoiser"])
        dcfg["channel_multipliers"] = tuple(dcfg["channel_multipliers"])
        if dcfg.get("attention_levels") is not None:
            dcfg["attention_levels"] = tuple(dcfg["attention_levels"])
        dcfg["dtype"] = "float32"
        mm = meta["model"]
        model = DenoiserModel(DenoiserConfig(**dcfg), mm["in_channels"], mm["num_writers"], mm["vocab_size"])
        model.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
        return cls(
            model=model,
            codec=Codec.from_state(meta["codec"], tensors),
            vocab=Vocabulary.from_dict(meta["vocab"]),
            schedule=Schedule.from_dict(meta["schedule"]),
            image_size=tuple(meta["image_size"]),
            run_config=meta.get("run_config", ""),
            history=list(meta.get("history", [])),
            writer_map={int(k): v for k, v in meta.get("writer_map", {}).items()},
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def make_batches(dataset: Dataset, vocab: Vocabulary, max_len: int, latents: np.ndarray,
                 batch_size: int, rng: np.random.Generator) -> list[Batch]:
    order = rng.permutation(len(dataset))
    ids = dataset.writer_ids()
    tokens = tokenize_batch(dataset.words(), vocab, max_len)
    return [Batch(None, ids[sel], tokens[sel], latents[sel])
            for sel in (order[s:s + batch_size] for s in range(0, len(order), batch_size))]


def train(model: DenoiserModel, dataset: Dataset, config: TrainConfig, codec: Codec, schedule: Schedule,
          vocab: Vocabulary | None = None, run_config: str = "",
          checkpoint_path: str | os.PathLike | None = None,
          log: Callable[[str], None] | None = None) -> Checkpoint:
    """Fit ``model`` with AdamW on the noise-prediction objective.

    Codec statistics are fitted on the dataset unless already fitted.
    Prints ``epoch=<n> loss=<f>`` every ``log_every`` epochs.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    log = log or (lambda line: print(line, file=sys.stdout, flush=True))
    vocab = vocab or dataset.vocabulary()
    for word in dataset.words():
        if not keep_word(word):
            raise ValidationError(f"word {word!r} violates the 2-7 character filter")
        if not vocab.covers(word):
            raise VocabularyError(f"vocabulary does not cover word {word!r}")
    images = dataset.images()
    if not codec.fitted:
        codec.fit_stats(images)
    latents = codec.to_latent(images).astype(model.style.weights.dtype)

    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    ckpt = Checkpoint(model, codec, vocab, schedule, tuple(images.shape[2:]), run_config,
                      [], dict(dataset.writer_map))
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for step, batch in enumerate(make_batches(dataset, vocab, model.config.max_len, latents,
                                                  config.batch_size, rng)):
            try:
                loss = training_loss(batch, model, schedule, codec, rng)
                model.zero_grad()
                T.backward(loss)
            except NumericError as exc:
                raise NumericError(f"non-finite value at epoch {epoch} step {step}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            opt.step()
            total += value * len(batch)
        ckpt.history.append(total / len(dataset))
        if config.log_every and epoch % config.log_every == 0:
            log(f"epoch={epoch} loss={ckpt.history[-1]:.6f}")
        if checkpoint_path and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            ckpt.save(checkpoint_path)
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return ckpt


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def interpolate_styles(table: StyleTable | np.ndarray, id_a: int, id_b: int, lam: float) -> np.ndarray:
    """(1 - lam) * Y_a + lam * Y_b for two rows of the style table."""
    weights = table.weights.data if isinstance(table, StyleTable) else np.asarray(table)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"interpolation weight must lie in [0, 1], got {lam}")
    n = weights.shape[0]
    for i in (id_a, id_b):
        if not 0 <= int(i) < n:
            raise IndexError(f"writer id {i} outside [0, {n})")
    lam = weights.dtype.type(lam)
    return (1 - lam) * weights[int(id_a)] + lam * weights[int(id_b)]


@dataclass
class SampleRequest:
    word: str
    writer_id: int | None = None
    # (id_a, id_b, lambda)
    interpolation: tuple[int, int, float] | None = None
    t_sample: int = 600
    seed: int = 0

    def style_vector(self, table: StyleTable) -> np.ndarray:
        if self.interpolation is not None:
            a, b, lam = self.interpolation
            return interpolate_styles(table, a, b, lam)
        if self.writer_id is None:
            raise ValidationError("sample request needs a writer id or an interpolation")
        return interpolate_styles(table, self.writer_id, self.writer_id, 0.0)


def sample_batch(checkpoint: Checkpoint, requests: Sequence[SampleRequest],
                 on_step: Callable[[int], None] | None = None) -> list[np.ndarray]:
    """Run the reverse chain for several requests at once.

    Each request owns a generator seeded from ``request.seed``; it draws the
    starting latent and then one noise tensor per step t > 1.  Requests with
    a smaller ``t_sample`` join the batch when the countdown reaches them.
    Returns images (1, H, W) clamped to [-1, 1].
    """
    model, schedule, codec = checkpoint.model, checkpoint.schedule, checkpoint.codec
    if not requests:
        return []
    for r in requests:
        if not 1 <= r.t_sample <= schedule.T:
            raise ValidationError(f"t_sample {r.t_sample} outside [1, {schedule.T}]")
    dtype = model.style.weights.dtype
    tokens = tokenize_batch([r.word for r in requests], checkpoint.vocab, model.config.max_len)
    styles = np.stack([r.style_vector(model.style) for r in requests])
    shape = codec.latent_shape(*checkpoint.image_size)
    rngs = [np.random.default_rng(r.seed) for r in requests]
    z = np.stack([g.standard_normal(shape).astype(dtype) for g in rngs])
    t_start = np.array([r.t_sample for r in requests])
    with T.no_grad():
        context = model.text_context(tokens).data
        for t in range(int(t_start.max()), 0, -1):
            active = np.flatnonzero(t_start >= t)
            eps_hat = model.predict_noise(Tensor(z[active]), t, None, Tensor(context[active]),
                                          style_vectors=Tensor(styles[active])).data
            if t > 1:
                noise = np.stack([rngs[i].standard_normal(shape).astype(dtype) for i in active])
            else:
                noise = np.zeros_like(eps_hat)
            z[active] = posterior_step(z[active], eps_hat, t, noise, schedule).data
            if on_step is not None:
                on_step(t)
    images = np.clip(codec.to_image(z), -1.0, 1.0)
    return [img for img in images]


def sample(checkpoint: Checkpoint, request: SampleRequest, out_path: str | os.PathLike | None = None) -> np.ndarray:
    image = sample_batch(checkpoint, [request])[0]
    if out_path is not None:
        write_pgm(image, out_path)
    return image
