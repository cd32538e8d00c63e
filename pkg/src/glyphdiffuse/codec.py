"""Image <-> latent codecs standing in for a pretrained VAE.

Three kinds:

* ``identity``: latents are the pixels.
* ``pooled``: average-pool by ``factor`` and lift the single channel to
  ``latent_channels`` through a frozen orthonormal 1x1 map; decoding
  projects back and upsamples nearest-neighbour.
* ``learned``: a small convolutional autoencoder trained on pixel MSE.

Every codec carries per-channel latent statistics so diffusion always sees
standardised latents (see :meth:`Codec.fit_stats`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .nn import Conv2d, Module
from .optim import AdamW
from .tensor import Tensor

logger = logging.getLogger(__name__)

KINDS = ("identity", "pooled", "learned")


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


class AutoEncoder(Module):
    def __init__(self, rng: np.random.Generator, factor: int, latent_channels: int, hidden: int, dtype=np.float32):
        steps = int(np.log2(factor))
        self.enc_in = Conv2d(rng, 1, hidden, 3, dtype=dtype)
        self.enc_down = [Conv2d(rng, hidden, hidden, 3, stride=2, dtype=dtype) for _ in range(steps)]
        self.enc_out = Conv2d(rng, hidden, latent_channels, 1, dtype=dtype)
        self.dec_in = Conv2d(rng, latent_channels, hidden, 3, dtype=dtype)
        self.dec_up = [Conv2d(rng, hidden, hidden, 3, dtype=dtype) for _ in range(steps)]
        self.dec_out = Conv2d(rng, hidden, 1, 3, dtype=dtype)

    def encode(self, x: Tensor) -> Tensor:
        h = T.silu(self.enc_in(x))
        for conv in self.enc_down:
            h = T.silu(conv(h))
        return self.enc_out(h)

    def decode(self, z: Tensor) -> Tensor:
        h = T.silu(self.dec_in(z))
        for conv in self.dec_up:
            h = T.silu(conv(T.upsample_nearest(h, 2)))
        return self.dec_out(h)


@dataclass
class AutoEncoderConfig:
    factor: int = 2
    latent_channels: int = 4
    hidden_channels: int = 16
    epochs: int = 80
    batch_size: int = 16
    learning_rate: float = 5e-3
    weight_decay: float = 0.0


class Codec:
    def __init__(self, kind: str = "pooled", factor: int = 2, latent_channels: int = 4,
                 lift: np.ndarray | None = None, autoencoder: AutoEncoder | None = None,
                 seed: int = 0):
        if kind not in KINDS:
            raise ValidationError(f"unknown codec kind {kind!r}; expected one of {KINDS}")
        if kind == "identity":
            factor, latent_channels = 1, 1
        if factor < 1 or factor & (factor - 1):
            raise ValidationError(f"spatial factor must be a power of 2, got {factor}")
        if kind == "learned" and autoencoder is None:
            raise ValidationError("a learned codec needs a trained autoencoder")
        self.kind = kind
        self.factor = factor
        self.latent_channels = latent_channels
        if kind == "pooled" and lift is None:
            # orthonormal column: encode then decode is exact for block-constant images
            q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((latent_channels, 1)))
            lift = q[:, 0] * np.sign(q[0, 0])
        # every stored statistic is float32-representable so checkpoints round-trip exactly
        self.lift = None if lift is None else _f32(lift).reshape(-1)
        self.autoencoder = autoencoder
        self.mean = np.zeros(latent_channels)
        self.std = np.ones(latent_channels)
        self.fitted = False

    # -- raw transport ---------------------------------------------------------
    def _check_image(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionError(f"expected images of shape (B, 1, H, W), got {x.shape}")
        if x.shape[2] % self.factor or x.shape[3] % self.factor:
            raise DimensionError(f"image extents {x.shape[2:]} not divisible by factor {self.factor}")

    def encode(self, images) -> np.ndarray:
        """Images (B, 1, H, W) -> raw latents (B, C', H/f, W/f)."""
        x = np.asarray(images.data if isinstance(images, Tensor) else images)
        self._check_image(x)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "pooled":
            B, _, H, W = x.shape
            f = self.factor
            pooled = x.reshape(B, 1, H // f, f, W // f, f).mean(axis=(3, 5))
            return (pooled * self.lift.reshape(1, -1, 1, 1)).astype(x.dtype)
        with T.no_grad():
            return self.autoencoder.encode(Tensor(x.astype(np.float32))).data.astype(x.dtype)

    def decode(self, latents) -> np.ndarray:
        z = np.asarray(latents.data if isinstance(latents, Tensor) else latents)
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise DimensionError(f"expected latents with {self.latent_channels} channels, got {z.shape}")
        if self.kind == "identity":
            return z.copy()
        if self.kind == "pooled":
            img = np.tensordot(self.lift, z, axes=(0, 1))[:, None]
            f = self.factor
            return img.repeat(f, axis=2).repeat(f, axis=3).astype(z.dtype)
        with T.no_grad():
            return self.autoencoder.decode(Tensor(z.astype(np.float32))).data.astype(z.dtype)

    # -- standardisation -------------------------------------------------------
    def fit_stats(self, images, batch_size: int = 64) -> None:
        lat = np.concatenate([self.encode(images[s:s + batch_size]) for s in range(0, len(images), batch_size)])
        self.mean = _f32(lat.mean(axis=(0, 2, 3), dtype=np.float64))
        std = _f32(lat.std(axis=(0, 2, 3), dtype=np.float64))
        self.std = np.where(std > 1e-8, std, 1.0)
        self.fitted = True

    def standardize(self, z: np.ndarray) -> np.ndarray:
        return ((z - self.mean.reshape(1, -1, 1, 1)) / self.std.reshape(1, -1, 1, 1)).astype(z.dtype)

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return (z * self.std.reshape(1, -1, 1, 1) + self.mean.reshape(1, -1, 1, 1)).astype(z.dtype)

    def to_latent(self, images) -> np.ndarray:
        return self.standardize(self.encode(images))

    def to_image(self, z) -> np.ndarray:
        return self.decode(self.destandardize(np.asarray(z.data if isinstance(z, Tensor) else z)))

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return self.latent_channels, height // self.factor, width // self.factor

    # -- serialisation ---------------------------------------------------------
    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {"kind": self.kind, "factor": self.factor, "latent_channels": self.latent_channels}
        tensors = {"codec.mean": self.mean, "codec.std": self.std}
        if self.lift is not None:
            tensors["codec.lift"] = self.lift
        if self.autoencoder is not None:
            meta["hidden_channels"] = int(self.autoencoder.enc_in.weight.shape[0])
            for k, v in self.autoencoder.named_parameters("codec.ae."):
                tensors[k] = v.data
        return meta, tensors

    @classmethod
    def from_state(cls, meta: dict, tensors: dict[str, np.ndarray]) -> "Codec":
        ae = None
        if meta["kind"] == "learned":
            ae = AutoEncoder(np.random.default_rng(0), meta["factor"], meta["latent_channels"],
                             meta["hidden_channels"])
            ae.load_state_dict({k[len("codec.ae."):]: v for k, v in tensors.items()
                                if k.startswith("codec.ae.")})
        codec = cls(meta["kind"], meta["factor"], meta["latent_channels"],
                    lift=tensors.get("codec.lift"), autoencoder=ae)
        codec.mean = np.asarray(tensors["codec.mean"], dtype=np.float64)
        codec.std = np.asarray(tensors["codec.std"], dtype=np.float64)
        codec.fitted = True
        return codec

    def describe(self) -> str:
        return (f"codec kind={self.kind} factor={self.factor} channels={self.latent_channels} "
                f"mean={np.round(self.mean, 4).tolist()} std={np.round(self.std, 4).tolist()}")


def round_trip_rmse(codec: Codec, images) -> float:
    x = np.asarray(images, dtype=np.float32)
    rec = codec.decode(codec.encode(x))
    return float(np.sqrt(np.mean((rec - x) ** 2)))


def train_autoencoder(images, config: AutoEncoderConfig | None = None, seed: int = 0,
                      history: list | None = None) -> Codec:
    """Fit a learned codec on pixel MSE; deterministic for a fixed seed."""
    config = config or AutoEncoderConfig()
    x = np.asarray(images, dtype=np.float32)
    if x.ndim != 4 or len(x) == 0:
        raise ValidationError("train_autoencoder needs a non-empty (N, 1, H, W) image array")
    rng = np.random.default_rng(seed)
    ae = AutoEncoder(rng, config.factor, config.latent_channels, config.hidden_channels)
    opt = AdamW(ae.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    n = len(x)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            batch = Tensor(x[order[s:s + config.batch_size]])
            loss = T.mse_loss(ae.decode(ae.encode(batch)), batch)
            ae.zero_grad()
            T.backward(loss)
            opt.step()
            total += loss.item() * len(batch.data)
        mean_loss = total / n
        if history is not None:
            history.append(mean_loss)
        logger.info("codec epoch=%d loss=%.6f", epoch + 1, mean_loss)
    codec = Codec("learned", config.factor, config.latent_channels, autoencoder=ae)
    codec.fit_stats(x)
    return codec
