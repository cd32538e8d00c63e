"""Dense tensors with reverse-mode automatic differentiation.

Only the operations needed by the denoiser, codec, encoders and classifier
are provided.  Every op checks its output for NaN/Inf and raises
:class:`~glyphdiffuse.errors.NumericError` instead of propagating it.

A graph is recorded implicitly while ops run on tensors that require
gradients.  :func:`backward` linearises that graph into a :class:`Tape`
(topological order, one entry per node) and walks it once in reverse.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ids = itertools.count()
_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for tensors built from non-float data."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> dict[int, np.ndarray]:
        return backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x))
    return Tensor(x, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single reduction catches any NaN/Inf; only confirm elementwise on a hit
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.op = op
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), bw, "mul")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    xd = x.data
    return _make(xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),), "silu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of the last two axes; leading axes are batch axes.

    ``b`` may also be a plain 2-D weight shared across the batch of ``a``.
    """
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch extents differ between {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} in shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradient scatters back into the rows."""
    idx = np.asarray(indices, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx[(idx < 0) | (idx >= n)].reshape(-1)[0])
        raise IndexError(f"embedding index {bad} out of range for table with {n} rows")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, shape[-1]))
        return (out,)

    return _make(table.data[idx], (table,), bw, "embedding")


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------

_COLS_BYTES = 2_500_000


def _valid(out_len: int, in_len: int, offset: int, pad: int, stride: int) -> tuple[int, int, int, int]:
    # output index range [o0, o1) whose tap at kernel offset lands inside the input
    o0 = max(0, -(-(pad - offset) // stride))
    o1 = min(out_len, (in_len - 1 + pad - offset) // stride + 1)
    i0 = o0 * stride + offset - pad
    return o0, o1, i0, i0 + (o1 - o0 - 1) * stride + 1


def _taps(kh, kw, H, W, Ho, Wo, ph, pw, stride):
    taps = []
    for i in range(kh):
        ry = _valid(Ho, H, i, ph, stride)
        for j in range(kw):
            rx = _valid(Wo, W, j, pw, stride)
            if ry[1] > ry[0] and rx[1] > rx[0]:
                taps.append((i, j, ry, rx))
    return taps


def _im2col(xs: np.ndarray, kh: int, kw: int, Ho: int, Wo: int, stride: int, taps) -> np.ndarray:
    C = xs.shape[1]
    cols = np.zeros((C, kh, kw, xs.shape[0], Ho, Wo), dtype=xs.dtype)
    for i, j, (y0, y1, iy0, iy1), (x0, x1, ix0, ix1) in taps:
        cols[:, i, j, :, y0:y1, x0:x1] = xs[:, :, iy0:iy1:stride, ix0:ix1:stride].transpose(1, 0, 2, 3)
    return cols.reshape(C * kh * kw, -1)


def _chunk(C: int, kh: int, kw: int, Ho: int, Wo: int, itemsize: int) -> int:
    return max(1, _COLS_BYTES // (C * kh * kw * Ho * Wo * itemsize))


def _conv_raw(xd: np.ndarray, wd: np.ndarray, stride: int) -> np.ndarray:
    B, C, H, W = xd.shape
    O, _, kh, kw = wd.shape
    wm = wd.reshape(O, -1)
    if kh == 1 and kw == 1 and stride == 1:
        return np.matmul(wm, xd.reshape(B, C, H * W)).reshape(B, O, H, W)
    Ho, Wo = -(-H // stride), -(-W // stride)
    taps = _taps(kh, kw, H, W, Ho, Wo, kh // 2, kw // 2, stride)
    chunk = _chunk(C, kh, kw, Ho, Wo, xd.dtype.itemsize)
    out = np.empty((B, O, Ho, Wo), dtype=np.result_type(xd, wd))
    for s in range(0, B, chunk):
        xs = xd[s:s + chunk]
        r = (wm @ _im2col(xs, kh, kw, Ho, Wo, stride, taps)).reshape(O, xs.shape[0], Ho, Wo)
        out[s:s + chunk] = r.transpose(1, 0, 2, 3)
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation.

    x is (B, C, H, W), w is (O, C, kh, kw) with odd kernel extents.  With
    stride 1 the spatial extents are preserved; stride s gives ceil(H/s).
    The batch is processed in chunks so the im2col buffer stays cache-sized.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise DimensionError(f"conv2d: input {x.shape} has {C} channels, weight {w.shape} expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {(kh, kw)}")
    xd, wd = x.data, w.data
    out = _conv_raw(xd, wd, stride)
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)
    Ho, Wo = out.shape[2:]

    def bw(g):
        gx = gw = gb = None
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad and stride == 1:
            # same-padded stride-1 correlation is undone by the flipped, transposed kernel
            gx = _conv_raw(g, np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)), 1)
        if kh == 1 and kw == 1 and stride == 1:
            if w.requires_grad:
                g3 = g.reshape(B, O, H * W)
                gw = np.matmul(g3, xd.reshape(B, C, H * W).transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            return (gx, gw) if b is None else (gx, gw, gb)
        taps = _taps(kh, kw, H, W, Ho, Wo, kh // 2, kw // 2, stride)
        chunk = _chunk(C, kh, kw, Ho, Wo, xd.dtype.itemsize)
        wm = wd.reshape(O, -1)
        if w.requires_grad:
            gw = np.zeros_like(wm)
        scatter = x.requires_grad and stride != 1
        if scatter:
            gx = np.zeros(xd.shape, dtype=g.dtype)
        for s in range(0, B, chunk):
            gs = g[s:s + chunk]
            n = gs.shape[0]
            gm = gs.transpose(1, 0, 2, 3).reshape(O, -1)
            if w.requires_grad:
                gw += gm @ _im2col(xd[s:s + n], kh, kw, Ho, Wo, stride, taps).T
            if scatter:
                gcols = (wm.T @ gm).reshape(C, kh, kw, n, Ho, Wo)
                gxs = gx[s:s + n]
                for i, j, (y0, y1, iy0, iy1), (x0, x1, ix0, ix1) in taps:
                    gxs[:, :, iy0:iy1:stride, ix0:ix1:stride] += \
                        gcols[:, i, j, :, y0:y1, x0:x1].transpose(1, 0, 2, 3)
        if gw is not None:
            gw = gw.reshape(wd.shape)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "conv2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return _make(out, (x,),
                 lambda g: (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),),
                 "upsample_nearest")


def avg_pool(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % factor or W % factor:
        raise DimensionError(f"avg_pool: extents {(H, W)} not divisible by {factor}")
    out = x.data.reshape(B, C, H // factor, factor, W // factor, factor).mean(axis=(3, 5))
    scale = 1.0 / (factor * factor)
    return _make(out, (x,),
                 lambda g: (g.repeat(factor, axis=2).repeat(factor, axis=3) * scale,),
                 "avg_pool")


# ---------------------------------------------------------------------------
# normalisation and losses
# ---------------------------------------------------------------------------

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalisation over (B, C, ...) with per-channel affine."""
    B, C = x.shape[:2]
    if C % groups:
        raise DimensionError(f"group_norm: {C} channels not divisible into {groups} groups")
    xd = x.data
    xg = xd.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(xd.shape)
    bshape = (1, C) + (1,) * (xd.ndim - 2)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, xd.ndim))

    def bw(g):
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxh = (g * gd).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            gx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                        - xh * (dxh * xh).mean(axis=-1, keepdims=True))
            gx = gx.reshape(xd.shape)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw, "group_norm")


def mse_loss(pred: Tensor, target) -> Tensor:
    pred, target = _coerce(pred, target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    scale = 2.0 / diff.size

    def bw(g):
        return (g * scale * diff if pred.requires_grad else None,
                -g * scale * diff if target.requires_grad else None)

    return _make(np.asarray((diff * diff).mean()), (pred, target), bw, "mse_loss")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    N, K = logits.shape
    if labels.shape != (N,):
        raise DimensionError(f"cross_entropy: labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise IndexError(f"cross_entropy: label out of range for {K} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(N)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / N,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

@dataclass
class TapeNode:
    op: str
    node_id: int
    inputs: tuple[int, ...]
    tensor: Tensor = field(repr=False)


@dataclass
class Tape:
    """Topologically ordered record of the graph reachable from a root."""

    nodes: list[TapeNode] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if t.node_id in seen:
                continue
            seen.add(t.node_id)
            stack.append((t, True))
            for p in reversed(t._parents):
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        return cls([TapeNode(t.op, t.node_id, tuple(p.node_id for p in t._parents), t) for t in order])


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Returns ``{node_id: gradient}`` for every node on the tape.  Leaf
    tensors also accumulate their gradient into ``.grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a tensor that does not require grad")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        t = node.tensor
        g = grads.get(node.node_id)
        if g is None:
            g = np.zeros_like(t.data)
            grads[node.node_id] = g
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return grads


def gradient_of(grads: dict[int, np.ndarray], tensor: Tensor) -> np.ndarray:
    """Look up a tensor's gradient, zero when it did not take part."""
    g = grads.get(tensor.node_id)
    return np.zeros_like(tensor.data) if g is None else g


def gradcheck(fn: Callable[..., Tensor], inputs: Iterable[np.ndarray], h: float = 1e-5,
              rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps tensors to a tensor; it is contracted with a fixed random
    projection so that the full Jacobian is exercised.  Inputs are cast to
    float64.  Relative error is ``|a - n| / max(|a|, |n|)`` in the 2-norm.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = rng.standard_normal(out.shape)

    def scalar(*arrs) -> float:
        with no_grad():
            return float((fn(*[Tensor(a) for a in arrs]).data * proj).sum())

    loss = tsum(mul(out, Tensor(proj)))
    grads = backward(loss)
    worst = 0.0
    for k, (arr, t) in enumerate(zip(arrays, tensors)):
        analytic = gradient_of(grads, t)
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = scalar(*arrays)
            arr[idx] = orig - h
            fm = scalar(*arrays)
            arr[idx] = orig
            numeric[idx] = (fp - fm) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
