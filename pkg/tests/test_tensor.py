import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from deepfake_vit import tensor as T
from deepfake_vit.errors import ContractError, DomainError, ShapeError
from deepfake_vit.tensor import Tensor

from conftest import check_grads


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def gelu_exact(x):
    # x * Phi(x), with the Gaussian CDF by numeric quadrature
    phi, _ = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -math.inf, x)
    return x * phi


# ---------------------------------------------------------------- Tensor type

def test_tensor_stores_float64_and_rejects_empty_extent():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64 and t.shape == (2, 2) and t.size == 4
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 0)))


# ---------------------------------------------------------------------- matmul

def test_matmul_identity():
    out = T.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projector_row():
    out = T.matmul(Tensor([[1, 0], [0, 0]]), Tensor([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, triple_loop_matmul(a, b),
                               rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_matmul_associative_against_oracle(m, k, n, p, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.normal(size=(m, k)), r.normal(size=(k, n)), r.normal(size=(n, p))
    left = T.matmul(T.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
    right = T.matmul(Tensor(a), T.matmul(Tensor(b), Tensor(c))).data
    oracle = triple_loop_matmul(triple_loop_matmul(a, b), c)
    np.testing.assert_allclose(left, oracle, atol=1e-12, rtol=1e-12)
    np.testing.assert_allclose(right, oracle, atol=1e-12, rtol=1e-12)


def test_matmul_gradient_rules(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    g = rng.normal(size=(3, 2))
    with T.Tape() as tape:
        loss = (T.matmul(a, b) * Tensor(g)).sum()
    T.backward(loss, tape)
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


# ----------------------------------------------------------------- elementwise

def test_gelu_and_sigmoid_at_zero():
    assert T.gelu(Tensor(0.0)).item() == 0.0
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_gelu_matches_quadrature():
    assert abs(T.gelu(Tensor(3.0)).item() - gelu_exact(3.0)) < 1e-3


@pytest.mark.parametrize("x", [-3.0, -1.0, -0.3, 0.5, 1.7])
def test_gelu_near_exact_definition(x):
    assert abs(T.gelu(Tensor(x)).item() - gelu_exact(x)) < 1e-3


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    assert T.log(T.clamp(Tensor([0.0]), 1e-7, 1.0)).item() == pytest.approx(math.log(1e-7))


def test_elementwise_rejects_non_broadcastable():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_sigmoid_extreme_logits_finite():
    with np.errstate(over="raise"):
        out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


# --------------------------------------------------------------------- softmax

def test_softmax_trivial_cases():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_direct_formula():
    x = np.array([1.0, 2.0, 3.0])
    oracle = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, oracle, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=-1).data, s, atol=1e-12)


# ---------------------------------------------------------------- backward API

def test_backward_sum_gives_ones(rng):
    w = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    with T.Tape() as tape:
        loss = w.sum()
    T.backward(loss, tape)
    np.testing.assert_array_equal(w.grad, np.ones((2, 3, 4)))


def test_backward_sigmoid_at_zero():
    w = Tensor(0.0, requires_grad=True)
    with T.Tape() as tape:
        loss = T.sigmoid(w)
    T.backward(loss, tape)
    assert w.grad == 0.25


def test_backward_seeds_loss_grad_with_one():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        loss = (w * w).sum()
    T.backward(loss, tape)
    assert loss.grad == 1.0


def test_backward_contract_errors():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        y = w * 2.0
    with pytest.raises(ContractError):
        T.backward(y, tape)
    with pytest.raises(ContractError):
        T.backward(Tensor(1.0), T.Tape())


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with T.Tape() as tape:
        with T.no_grad():
            _ = T.sigmoid(w) * 3.0
    assert len(tape) == 0


def test_reused_input_accumulates(rng):
    # x feeds two branches; gradients must add
    x = Tensor(rng.normal(size=4), requires_grad=True)
    with T.Tape() as tape:
        loss = (x * x + T.sigmoid(x)).sum()
    T.backward(loss, tape)
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, 2 * x.data + s * (1 - s), atol=1e-12)


# ------------------------------------------------------ finite-difference sweep

def _inputs(rng, *shapes):
    return [Tensor(rng.uniform(-2, 2, size=s), requires_grad=True) for s in shapes]


OPS = {
    "add": (lambda a, b: (a + b) * (a - b * 0.5), [(3, 4), (3, 4)]),
    "broadcast_add": (lambda a, b: (a + b) * a, [(3, 4), (4,)]),
    "sub": (lambda a, b: (a - b) * (a - b), [(2, 3), (2, 3)]),
    "mul": (lambda a, b: a * b, [(3, 3), (3, 3)]),
    "div": (lambda a, b: a / (b * b + 1.0), [(3,), (3,)]),
    "power": (lambda a: T.power(a * a + 1.0, -0.5), [(5,)]),
    "exp": (lambda a: T.exp(a), [(4,)]),
    "log": (lambda a: T.log(a * a + 0.5), [(4,)]),
    "clamp": (lambda a: T.clamp(a, -1.0, 1.0) * a, [(6,)]),
    "sigmoid": (lambda a: T.sigmoid(a), [(2, 3)]),
    "gelu": (lambda a: T.gelu(a), [(2, 3)]),
    "softmax": (lambda a, b: T.softmax(a, axis=-1) * b, [(2, 4), (2, 4)]),
    "matmul": (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: T.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "mean_axis": (lambda a: a.mean(axis=1)[:2] * a.sum(axis=0), [(3, 2)]),
    "reshape_transpose": (lambda a, b: a.reshape(3, 2).transpose(1, 0) * b, [(2, 3), (2, 3)]),
    "getitem_concat": (lambda a, b: T.concat([a[:, 1:], b], axis=1) * 1.5, [(2, 3), (2, 2)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    inputs = _inputs(rng, *shapes)
    weights = None

    def build():
        nonlocal weights
        out = fn(*inputs)
        if weights is None:
            weights = Tensor(np.random.default_rng(0).normal(size=out.shape))
        return (out * weights).sum()

    build()
    check_grads(build, inputs)


def test_im2col_gradient(rng):
    x = Tensor(rng.uniform(-2, 2, size=(1, 2, 5, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(1, 9, 2 * 3 * 3)))
    check_grads(lambda: (T.im2col(x, 3, 3, 2, ((1, 1), (1, 2))) * w).sum(), [x])


def test_gradients_bit_identical_across_runs():
    def run():
        r = np.random.default_rng(7)
        a, b = Tensor(r.normal(size=(4, 5)), requires_grad=True), Tensor(r.normal(size=(5, 3)), requires_grad=True)
        with T.Tape() as tape:
            loss = T.softmax(T.gelu(T.matmul(a, b)), axis=-1).sum() + T.sigmoid(a).mean()
        T.backward(loss, tape)
        return a.grad.tobytes() + b.grad.tobytes()

    assert run() == run()
