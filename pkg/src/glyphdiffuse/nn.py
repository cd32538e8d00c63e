"""Small parameter containers built on :mod:`glyphdiffuse.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameters and sub-modules are discovered from instance attributes
    in assignment order, which keeps parameter names stable."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = own.keys() - state.keys()
            extra = state.keys() - own.keys()
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            if k in state:
                arr = np.asarray(state[k])
                if arr.shape != p.shape:
                    raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
                p.data = arr.astype(p.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, dtype=np.float32, zero: bool = False):
        w = np.zeros((n_in, n_out)) if zero else rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(n_out), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, dtype=np.float32, zero: bool = False):
        fan_in = c_in * kernel * kernel
        shape = (c_out, c_in, kernel, kernel)
        w = np.zeros(shape) if zero else rng.standard_normal(shape) / np.sqrt(fan_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


def num_groups(channels: int) -> int:
    return min(8, channels)


class GroupNorm(Module):
    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.groups = num_groups(channels)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, rows: int, dim: int, dtype=np.float32, scale: float = 1.0):
        self.weight = _param(rng.standard_normal((rows, dim)) * scale, dtype)

    def __call__(self, idx) -> Tensor:
        return T.embedding(self.weight, idx)
