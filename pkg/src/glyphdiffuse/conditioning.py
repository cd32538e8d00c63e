"""Condition signals: timestep embedding, writer style and text context."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ValidationError, VocabularyError
from .nn import Embedding, Module, _param
from .tensor import Tensor

PAD = "<pad>"


def _sinusoid(positions: np.ndarray, dim: int, base: float) -> np.ndarray:
    if dim % 2:
        raise ValidationError(f"embedding width must be even, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    freq = base ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = pos / freq
    out = np.empty((pos.shape[0], dim), dtype=np.float64)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def timestep_embedding(t, dim: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding; a scalar ``t`` gives shape (dim,), an array (N, dim)."""
    arr = np.asarray(t)
    if (arr < 0).any():
        raise ValidationError(f"timestep must be >= 0, got {t!r}")
    out = _sinusoid(arr.reshape(-1), dim, base)
    return out[0] if arr.ndim == 0 else out


def positional_encoding(seq_len: int, dim: int, base: float = 1000.0) -> np.ndarray:
    """Rows ``pos`` of sin/cos pairs, even columns sine, odd columns cosine."""
    return _sinusoid(np.arange(seq_len), dim, base)


@dataclass(frozen=True)
class Vocabulary:
    chars: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValidationError("vocabulary characters must be unique")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocabulary":
        return cls(tuple(sorted({c for w in words for c in w})))

    @property
    def pad_index(self) -> int:
        return len(self.chars)

    @property
    def size(self) -> int:
        return len(self.chars) + 1

    @property
    def char_to_index(self) -> dict[str, int]:
        return dict(self._index)

    def index(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise VocabularyError(f"character {ch!r} is not in the vocabulary") from None

    def covers(self, word: str) -> bool:
        return all(c in self._index for c in word)

    def to_dict(self) -> dict:
        return {"chars": list(self.chars), "pad": PAD}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["chars"]))


def tokenize(word: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    if len(word) > max_len:
        raise ValidationError(f"word {word!r} has {len(word)} characters, max_len is {max_len}")
    idx = [vocab.index(c) for c in word]
    return np.array(idx + [vocab.pad_index] * (max_len - len(idx)), dtype=np.int64)


def tokenize_batch(words: Sequence[str], vocab: Vocabulary, max_len: int) -> np.ndarray:
    return np.stack([tokenize(w, vocab, max_len) for w in words])


def detokenize(indices, vocab: Vocabulary) -> str:
    return "".join(vocab.chars[i] for i in np.asarray(indices).tolist() if i != vocab.pad_index)


class TextEncoder(Module):
    """Character embedding + positional encoding + single-head self-attention."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, dim: int, max_len: int = 8,
                 use_positional_encoding: bool = True, use_attention: bool = True,
                 pe_base: float = 1000.0, dtype=np.float32):
        if dim % 2:
            raise ValidationError(f"text width must be even, got {dim}")
        self.char_embedding = Embedding(rng, vocab_size, dim, dtype)
        s = 1.0 / np.sqrt(dim)
        self.wq = _param(rng.standard_normal((dim, dim)) * s, dtype)
        self.wk = _param(rng.standard_normal((dim, dim)) * s, dtype)
        self.wv = _param(rng.standard_normal((dim, dim)) * s, dtype)
        self.dim = dim
        self.max_len = max_len
        self.use_positional_encoding = use_positional_encoding
        self.use_attention = use_attention
        self.pe = positional_encoding(max_len, dim, pe_base).astype(dtype)

    def embed(self, tokens) -> Tensor:
        x = self.char_embedding(tokens)
        if self.use_positional_encoding:
            x = x + Tensor(self.pe[: x.shape[-2]])
        return x

    def attention_weights(self, x: Tensor) -> Tensor:
        q = T.matmul(x, self.wq)
        k = T.matmul(x, self.wk)
        scores = T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
        return T.softmax(scores * (1.0 / np.sqrt(self.dim)), axis=-1)

    def __call__(self, tokens) -> Tensor:
        """(B, L) or (L,) token indices -> context of shape (B, L, dim) or (L, dim)."""
        x = self.embed(tokens)
        if not self.use_attention:
            return x
        return T.matmul(self.attention_weights(x), T.matmul(x, self.wv))


def encode_text(word: str, params: TextEncoder, vocab: Vocabulary, max_len: int | None = None) -> Tensor:
    return params(tokenize(word, vocab, max_len or params.max_len))


class StyleTable(Module):
    def __init__(self, rng: np.random.Generator, num_writers: int, dim: int, dtype=np.float32):
        if num_writers < 1:
            raise ValidationError("style table needs at least one writer")
        self.weights = _param(rng.standard_normal((num_writers, dim)), dtype)

    @property
    def num_writers(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weights, ids)


def style_embedding(writer_id: int, table: StyleTable) -> Tensor:
    if not 0 <= int(writer_id) < table.num_writers:
        raise IndexError(f"writer id {writer_id} outside [0, {table.num_writers})")
    return table(int(writer_id))
