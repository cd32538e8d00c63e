import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from glyphdiffuse import tensor as T
from glyphdiffuse.errors import ContractError, DimensionError, NumericError
from glyphdiffuse.tensor import Tape, Tensor, backward, gradcheck, gradient_of, no_grad


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def naive_conv(x, w, stride=1):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    Ho, Wo = -(-H // stride), -(-W // stride)
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                y, z = i * stride + u - ph, j * stride + v - pw
                                if 0 <= y < H and 0 <= z < W:
                                    acc += x[b, c, y, z] * w[o, c, u, v]
                    out[b, o, i, j] = acc
    return out


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    b = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(b)).data, b)


def test_matmul_scalar_product():
    assert T.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_against_triple_loop(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    assert np.abs(T.matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b)).max() < 1e-6


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- softmax -----------------------------------------------------------------

def test_softmax_symmetric():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_ln3():
    out = T.softmax(Tensor(np.array([0.0, np.log(3.0)]))).data
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-30, 30)),
       st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + c)).data
    assert np.allclose(a, b, atol=1e-9)
    assert abs(a.sum() - 1.0) < 1e-9


def test_softmax_large_logits_stay_finite():
    out = T.softmax(Tensor(np.array([1000.0, 0.0]))).data
    assert np.isfinite(out).all() and out[0] == 1.0


# -- conv2d ------------------------------------------------------------------

def test_conv_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 1, 4, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.allclose(T.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_ones_kernel_counts_neighbours():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3)))).data[0, 0]
    assert out[1, 1] == 9.0 and out[0, 0] == 4.0


def test_conv_same_padding_shape():
    out = T.conv2d(Tensor(np.zeros((1, 2, 5, 7))), Tensor(np.zeros((3, 2, 3, 3))))
    assert out.shape == (1, 3, 5, 7)


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_against_naive(rng, stride, k):
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, k, k))
    assert np.abs(T.conv2d(Tensor(x), Tensor(w), stride=stride).data - naive_conv(x, w, stride)).max() < 1e-10


def test_conv_large_batch_chunking_matches_small(rng):
    # enough columns to force several chunks
    x = rng.standard_normal((40, 8, 16, 64)).astype(np.float32)
    w = rng.standard_normal((8, 8, 3, 3)).astype(np.float32)
    full = T.conv2d(Tensor(x), Tensor(w)).data
    parts = np.concatenate([T.conv2d(Tensor(x[i:i + 1]), Tensor(w)).data for i in range(40)])
    assert np.allclose(full, parts, atol=1e-4)


# -- backward ----------------------------------------------------------------

def test_constant_loss_zero_gradients():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = T.tsum(p * 0.0) + 5.0
    grads = backward(loss)
    assert np.array_equal(gradient_of(grads, p), np.zeros(2))


def test_linear_loss_gradient():
    p = Tensor(np.array(2.0), requires_grad=True)
    backward(p * 3.0)
    assert p.grad == 3.0


def test_backward_needs_scalar():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(p * 2.0)


def test_backward_needs_grad():
    with pytest.raises(ContractError):
        backward(T.tsum(Tensor(np.ones(3))))


def test_no_grad_records_nothing():
    p = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = p * 2.0
    assert not y.requires_grad and y.is_leaf


def test_non_differentiable_input_gets_no_gradient():
    p = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.arange(3.0))
    grads = backward(T.tsum(p * c))
    assert c.node_id not in grads and c.grad is None


def test_tape_topological_and_unique(rng):
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    h = T.silu(p)
    loss = T.tsum(h * h + h)
    tape = Tape.from_root(loss)
    pos = {n.node_id: i for i, n in enumerate(tape.nodes)}
    assert len(pos) == len(tape.nodes)
    for n in tape.nodes:
        for i in n.inputs:
            if i in pos:
                assert pos[i] < pos[n.node_id]


def test_shared_subexpression_accumulates():
    p = Tensor(np.array(3.0), requires_grad=True)
    backward(p * p + p)
    assert p.grad == 7.0


def test_nan_raises():
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        T.mul(Tensor(np.array([np.inf])), Tensor(np.array([0.0])))


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        T.embedding(Tensor(np.ones((3, 2))), [3])


def test_precision_context_sets_default_dtype():
    with T.precision(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


# -- finite-difference checks ------------------------------------------------

def _ops(rng):
    gamma = rng.standard_normal(4)
    beta = rng.standard_normal(4)
    labels = rng.integers(0, 5, size=3)
    idx = rng.integers(0, 4, size=(2, 3))
    target = rng.standard_normal((3, 4))
    return {
        "add": (lambda a, b: a + b, [(3, 4), (4,)]),
        "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
        "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
        "silu": (T.silu, [(3, 4)]),
        "tanh": (T.tanh, [(3, 4)]),
        "matmul": (T.matmul, [(3, 4), (4, 2)]),
        "matmul_batched": (T.matmul, [(2, 3, 4), (2, 4, 2)]),
        "linear": (T.linear, [(3, 4), (4, 2), (2,)]),
        "softmax": (lambda x: T.softmax(x, axis=-1), [(3, 5)]),
        "sum": (lambda x: T.tsum(x, axis=1), [(3, 4)]),
        "mean": (lambda x: T.mean(x, axis=(0, 2)), [(2, 3, 4)]),
        "reshape": (lambda x: T.reshape(x, (4, 3)) * T.reshape(x, (4, 3)), [(3, 4)]),
        "transpose": (lambda x: T.transpose(x, (2, 0, 1)) * 1.5, [(2, 3, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        "embedding": (lambda w: T.embedding(w, idx), [(4, 3)]),
        "conv2d": (T.conv2d, [(2, 2, 5, 4), (3, 2, 3, 3), (3,)]),
        "conv2d_stride2": (lambda x, w: T.conv2d(x, w, stride=2), [(1, 2, 5, 6), (2, 2, 3, 3)]),
        "upsample": (lambda x: T.upsample_nearest(x, 2), [(1, 2, 2, 3)]),
        "avg_pool": (lambda x: T.avg_pool(x, 2), [(1, 2, 4, 6)]),
        "group_norm": (lambda x, g, b: T.group_norm(x, 2, g, b), [(2, 4, 3, 3), (4,), (4,)]),
        "mse": (lambda x: T.mse_loss(x, Tensor(target)), [(3, 4)]),
        "cross_entropy": (lambda x: T.cross_entropy(x, labels), [(3, 5)]),
    }


@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, (fn, shapes) in _ops(rng).items():
        inputs = [rng.standard_normal(s) for s in shapes]
        err = gradcheck(fn, inputs, h=1e-5, rng=rng)
        assert err < 1e-4, f"{name}: relative error {err:.2e}"


@given(st.tuples(st.integers(1, 3), st.integers(1, 4)), st.booleans())
def test_broadcast_gradient_shapes(shape, bcast_rows):
    a = Tensor(np.ones(shape), requires_grad=True)
    bshape = (1, shape[1]) if bcast_rows else shape
    b = Tensor(np.full(bshape, 2.0), requires_grad=True)
    backward(T.tsum(a * b))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    assert np.allclose(b.grad, shape[0] if bcast_rows else 1.0)
