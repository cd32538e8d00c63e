"""U-Net-lite noise predictor conditioned on timestep, writer style and text."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .conditioning import StyleTable, TextEncoder, timestep_embedding
from .errors import DimensionError, ValidationError
from .nn import Conv2d, GroupNorm, Linear, Module
from .tensor import Tensor


@dataclass
class DenoiserConfig:
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2)
    resnet_blocks_per_level: int = 1
    attention_heads: int = 2
    # None means "lowest resolution only"
    attention_levels: tuple[int, ...] | None = None
    text_dim: int = 64
    max_len: int = 8
    pe_base: float = 1000.0
    use_positional_encoding: bool = True
    use_attention: bool = True
    seed: int = 0
    dtype: str = "float32"

    def resolved_attention_levels(self) -> tuple[int, ...]:
        if self.attention_levels is None:
            return (len(self.channel_multipliers) - 1,)
        return tuple(self.attention_levels)

    def validate(self) -> None:
        if self.resnet_blocks_per_level < 1:
            raise ValidationError("resnet_blocks_per_level must be >= 1")
        if not self.channel_multipliers:
            raise ValidationError("channel_multipliers must not be empty")
        for lvl in self.resolved_attention_levels():
            if not 0 <= lvl < len(self.channel_multipliers):
                raise ValidationError(f"attention level {lvl} does not exist")
            width = self.base_channels * self.channel_multipliers[lvl]
            if width % self.attention_heads:
                raise ValidationError(f"{self.attention_heads} heads do not divide width {width}")
        if self.text_dim % 2:
            raise ValidationError("text_dim must be even")


# Full-scale reference values; never used by the desk tests.
FULL_SCALE = DenoiserConfig(base_channels=320, attention_heads=4, text_dim=320)


def _to_tokens(h: Tensor) -> Tensor:
    B, C, H, W = h.shape
    return T.transpose(T.reshape(h, (B, C, H * W)), (0, 2, 1))


def _from_tokens(x: Tensor, shape) -> Tensor:
    B, C, H, W = shape
    return T.reshape(T.transpose(x, (0, 2, 1)), (B, C, H, W))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention; q is (B, N, C), k and v are (B, M, C)."""
    B, N, C = q.shape
    M = k.shape[1]
    d = C // heads

    def split(x: Tensor, n: int) -> Tensor:
        return T.reshape(T.transpose(T.reshape(x, (B, n, heads, d)), (0, 2, 1, 3)), (B * heads, n, d))

    qh, kh, vh = split(q, N), split(k, M), split(v, M)
    scores = T.matmul(qh, T.transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(d))
    out = T.matmul(T.softmax(scores, axis=-1), vh)
    return T.reshape(T.transpose(T.reshape(out, (B, heads, N, d)), (0, 2, 1, 3)), (B, N, C))


class ResBlock(Module):
    def __init__(self, rng, c_in: int, c_out: int, emb_dim: int, dtype):
        self.norm1 = GroupNorm(c_in, dtype)
        self.conv1 = Conv2d(rng, c_in, c_out, 3, dtype=dtype)
        self.emb_proj = Linear(rng, emb_dim, c_out, dtype)
        self.norm2 = GroupNorm(c_out, dtype)
        self.conv2 = Conv2d(rng, c_out, c_out, 3, dtype=dtype)
        self.skip = Conv2d(rng, c_in, c_out, 1, dtype=dtype) if c_in != c_out else None

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(T.silu(self.norm1(x)))
        e = self.emb_proj(T.silu(emb))
        h = h + T.reshape(e, e.shape + (1, 1))
        h = self.conv2(T.silu(self.norm2(h)))
        return (x if self.skip is None else self.skip(x)) + h


class TransformerBlock(Module):
    """Self-attention over spatial positions, then cross-attention to the text."""

    def __init__(self, rng, channels: int, heads: int, context_dim: int, dtype):
        self.heads = heads
        self.norm1 = GroupNorm(channels, dtype)
        self.q1 = Linear(rng, channels, channels, dtype)
        self.k1 = Linear(rng, channels, channels, dtype)
        self.v1 = Linear(rng, channels, channels, dtype)
        self.proj1 = Linear(rng, channels, channels, dtype)
        self.norm2 = GroupNorm(channels, dtype)
        self.q2 = Linear(rng, channels, channels, dtype)
        self.k2 = Linear(rng, context_dim, channels, dtype)
        self.v2 = Linear(rng, context_dim, channels, dtype)
        self.proj2 = Linear(rng, channels, channels, dtype)

    def __call__(self, h: Tensor, context: Tensor) -> Tensor:
        shape = h.shape
        x = _to_tokens(self.norm1(h))
        a = multi_head_attention(self.q1(x), self.k1(x), self.v1(x), self.heads)
        h = h + _from_tokens(self.proj1(a), shape)
        x = _to_tokens(self.norm2(h))
        a = multi_head_attention(self.q2(x), self.k2(context), self.v2(context), self.heads)
        return h + _from_tokens(self.proj2(a), shape)


class DenoiserModel(Module):
    def __init__(self, config: DenoiserConfig, in_channels: int, num_writers: int, vocab_size: int):
        config.validate()
        self.config = config
        self.in_channels = in_channels
        self.num_writers = num_writers
        self.vocab_size = vocab_size
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        base = config.base_channels
        emb_dim = 4 * base
        self.emb_dim = emb_dim
        self.levels = len(config.channel_multipliers)
        attn = set(config.resolved_attention_levels())
        widths = [base * m for m in config.channel_multipliers]
        nblocks = config.resnet_blocks_per_level

        self.text = TextEncoder(rng, vocab_size, config.text_dim, config.max_len,
                                config.use_positional_encoding, config.use_attention,
                                config.pe_base, dtype)
        self.style = StyleTable(rng, num_writers, emb_dim, dtype)
        self.time1 = Linear(rng, base, emb_dim, dtype)
        self.time2 = Linear(rng, emb_dim, emb_dim, dtype)
        self.conv_in = Conv2d(rng, in_channels, base, 3, dtype=dtype)

        self.down: list[_Level] = []
        ch = base
        for i, width in enumerate(widths):
            level = _Level()
            level.blocks = []
            for r in range(nblocks):
                level.blocks.append(ResBlock(rng, ch, width, emb_dim, dtype))
                ch = width
                if i in attn:
                    level.blocks.append(TransformerBlock(rng, width, config.attention_heads, config.text_dim, dtype))
            level.resample = Conv2d(rng, width, width, 3, stride=2, dtype=dtype) if i < self.levels - 1 else None
            self.down.append(level)

        self.mid = _Level()
        self.mid.blocks = [ResBlock(rng, ch, ch, emb_dim, dtype),
                           TransformerBlock(rng, ch, config.attention_heads, config.text_dim, dtype)]
        self.mid.resample = None

        self.up: list[_Level] = []
        for i in reversed(range(self.levels)):
            width = widths[i]
            level = _Level()
            level.blocks = []
            for r in range(nblocks):
                level.blocks.append(ResBlock(rng, 2 * width if r == 0 else width, width, emb_dim, dtype))
                if i in attn:
                    level.blocks.append(TransformerBlock(rng, width, config.attention_heads, config.text_dim, dtype))
            level.resample = Conv2d(rng, width, widths[i - 1], 3, dtype=dtype) if i > 0 else None
            self.up.append(level)

        self.norm_out = GroupNorm(base, dtype)
        self.conv_out = Conv2d(rng, base, in_channels, 3, dtype=dtype, zero=True)

    # -- conditioning ------------------------------------------------------
    def text_context(self, tokens) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        return self.text(tokens)

    def style_vectors(self, style_ids) -> Tensor:
        ids = np.asarray(style_ids, dtype=np.int64).reshape(-1)
        bad = ids[(ids < 0) | (ids >= self.num_writers)]
        if bad.size:
            raise IndexError(f"writer id {int(bad[0])} outside [0, {self.num_writers})")
        return self.style(ids)

    def embed(self, t, style: Tensor) -> Tensor:
        temb = Tensor(timestep_embedding(np.asarray(t).reshape(-1), self.config.base_channels)
                      .astype(self.style.weights.dtype))
        return self.time2(T.silu(self.time1(temb))) + style

    # -- forward -----------------------------------------------------------
    def predict_noise(self, z_t, t, style_ids, context: Tensor, style_vectors: Tensor | None = None) -> Tensor:
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        if z_t.ndim != 4 or z_t.shape[1] != self.in_channels:
            raise DimensionError(f"expected latents (B, {self.in_channels}, H, W), got {z_t.shape}")
        B, _, H, W = z_t.shape
        f = 2 ** (self.levels - 1)
        if H % f or W % f:
            raise DimensionError(f"spatial extents {(H, W)} not divisible by {f}")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
        style = self.style_vectors(style_ids) if style_vectors is None else style_vectors
        if style.shape != (B, self.emb_dim):
            raise DimensionError(f"style batch {style.shape} does not match latents {z_t.shape}")
        if context.shape[0] != B:
            raise DimensionError(f"context batch {context.shape[0]} does not match latents batch {B}")
        emb = self.embed(t, style)

        h = self.conv_in(z_t)
        skips = []
        for level in self.down:
            h = level.run(h, emb, context)
            skips.append(h)
            if level.resample is not None:
                h = level.resample(h)
        h = self.mid.run(h, emb, context)
        for level in self.up:
            h = T.concat([h, skips.pop()], axis=1)
            h = level.run(h, emb, context)
            if level.resample is not None:
                h = level.resample(T.upsample_nearest(h, 2))
        return self.conv_out(T.silu(self.norm_out(h)))

    __call__ = predict_noise


class _Level(Module):
    blocks: list
    resample: Conv2d | None

    def run(self, h: Tensor, emb: Tensor, context: Tensor) -> Tensor:
        for block in self.blocks:
            h = block(h, emb) if isinstance(block, ResBlock) else block(h, context)
        return h


def count_parameters(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))
