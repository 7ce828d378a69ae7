import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgrnet.errors import DimensionError, NonFiniteError, ParameterError
from sgrnet.numerics import (
    Record,
    Tensor,
    concat,
    conv3d,
    expand,
    grad_check,
    hadamard,
    matmul,
    relu,
    reshape,
    scale,
    scatter_rows,
    sigmoid,
    softmax_cross_entropy,
    take_rows,
    tanh,
    total,
    transpose,
)

from sgrnet.checks import primitive_cases

from oracles import conv3d_loops


def param(a, name=None):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True, name=name)


# ------------------------------------------------------------ matmul


def test_matmul_identity_and_zero():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(matmul(np.eye(3), x).data, x)
    assert np.array_equal(matmul(np.zeros((4, 3)), x).data, np.zeros((4, 2)))


def test_matmul_hand_example():
    out = matmul([[1.0, 2, 3], [4, 5, 6]], [[1.0, 0], [0, 1], [1, 1]])
    assert out.data.tolist() == [[4, 5], [10, 11]]


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 2, 3)), np.ones((3, 3)))


def test_matmul_associativity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, k, l, n = rng.integers(1, 8, size=4)
        a, b, c = rng.normal(size=(m, k)), rng.normal(size=(k, l)), rng.normal(size=(l, n))
        left = matmul(matmul(a, b), c).data
        right = matmul(a, matmul(b, c)).data
        assert np.abs(left - right).max() <= 1e-9 * max(1.0, np.abs(left).max())


# ------------------------------------------------------------ conv3d


def test_conv3d_delta_kernel_is_identity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 6, 5, 5))
    k = np.zeros((1, 1, 3, 3, 3))
    k[0, 0, 1, 1, 1] = 1.0
    out = conv3d(x, k, pad="same")
    assert np.array_equal(out.data, x)


def test_conv3d_zero_kernel_gives_zero():
    x = np.random.default_rng(2).normal(size=(2, 9, 4, 4))
    out = conv3d(x, np.zeros((3, 2, 3, 3, 3)), pad=("valid", "same", "same"), dilation=(2, 1, 1))
    assert not out.data.any()


def test_conv3d_pavia_stem_shape():
    x = np.zeros((1, 103, 7, 7), dtype=np.float32)
    out = conv3d(x, np.zeros((8, 1, 15, 3, 3), dtype=np.float32), pad=("valid", "same", "same"))
    assert out.shape == (8, 89, 7, 7)


def test_conv3d_dilated_1d_example():
    x = np.array([1.0, 2, 3, 4, 5]).reshape(1, 5, 1, 1)
    k = np.ones((1, 1, 3, 1, 1))
    out = conv3d(x, k, pad="valid", dilation=(2, 1, 1))
    assert out.data.ravel().tolist() == [9.0]
    assert np.array_equal(out.data, conv3d_loops(x, k, ("valid",) * 3, (2, 1, 1)))


@pytest.mark.parametrize(
    "pad,dil",
    [
        (("valid", "valid", "valid"), (1, 1, 1)),
        (("valid", "same", "same"), (1, 1, 1)),
        (("same", "same", "same"), (2, 1, 1)),
        (("same", "valid", "same"), (2, 2, 1)),
    ],
)
def test_conv3d_matches_loop_oracle(pad, dil):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 11, 5, 4))
    w = rng.normal(size=(3, 2, 3, 3, 2))
    got = conv3d(x, w, pad=pad, dilation=dil).data
    np.testing.assert_allclose(got, conv3d_loops(x, w, pad, dil), atol=1e-12)


def test_conv3d_batched_equals_per_sample():
    rng = np.random.default_rng(4)
    xs = rng.normal(size=(3, 2, 8, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3, 3))
    batched = conv3d(xs, w, pad="same").data
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv3d(xs[i], w, pad="same").data, atol=1e-12)


def test_conv3d_kernel_too_large():
    with pytest.raises(DimensionError):
        conv3d(np.zeros((1, 10, 3, 3)), np.zeros((1, 1, 15, 3, 3)), pad=("valid", "same", "same"))


# ------------------------------------------------------------ elementwise / loss


def test_elementwise_values():
    assert sigmoid(np.array(0.0)).data == 0.5
    assert tanh(np.array(0.0)).data == 0.0
    assert hadamard([1.0, 2, 3], [4.0, 0, -1]).data.tolist() == [4, 0, -3]
    ref = float(1 / (1 + mpmath.exp(-mpmath.mpf(10))))
    assert abs(float(sigmoid(np.array(10.0)).data) - ref) < 1e-15
    assert relu([-1.0, 0.0, 2.0]).data.tolist() == [0, 0, 2]
    assert scale([1.0, 2.0], -1.0, 1.0).data.tolist() == [0.0, -1.0]


def test_binary_shape_mismatch():
    with pytest.raises(DimensionError):
        hadamard(np.ones(3), np.ones(4))


def test_cross_entropy_examples():
    assert abs(float(softmax_cross_entropy(np.zeros(9), 4).data) - math.log(9)) < 1e-12
    assert float(softmax_cross_entropy(np.array([100.0, 0.0]), 0).data) < 1e-40
    mpmath.mp.dps = 40
    ref = mpmath.log(mpmath.e + mpmath.e**2 + mpmath.e**3) - 2
    assert abs(float(softmax_cross_entropy(np.array([1.0, 2, 3]), 1).data) - float(ref)) < 1e-14
    assert abs(float(ref) - 1.40760596) < 1e-8


def test_cross_entropy_label_range():
    with pytest.raises(ParameterError):
        softmax_cross_entropy(np.zeros(3), 3)
    with pytest.raises(ParameterError):
        softmax_cross_entropy(np.zeros(3), -1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=12), st.data())
def test_cross_entropy_nonnegative_and_lnk(logits, data):
    label = data.draw(st.integers(0, len(logits) - 1))
    z = np.array(logits)
    loss = float(softmax_cross_entropy(z, label).data)
    assert loss >= 0
    const = float(softmax_cross_entropy(np.full_like(z, z[0]), label).data)
    assert abs(const - math.log(len(z))) < 1e-12
    if np.ptp(z) > 1e-3:
        assert abs(loss - math.log(len(z))) > 1e-12


# ------------------------------------------------------------ backward


def test_backward_sum_and_constant():
    x = param(np.random.default_rng(0).normal(size=(3, 4)))
    with Record() as rec:
        loss = total(x)
    assert np.array_equal(rec.backward(loss)[x], np.ones((3, 4)))

    c = Tensor(np.ones(3))
    with Record() as rec:
        loss = total(hadamard(c, c))
        loss = loss + total(scale(x, 0.0))
    grads = rec.backward(loss)
    assert not grads[x].any()


def test_backward_rejects_nonscalar():
    x = param(np.ones(3))
    with Record() as rec:
        y = scale(x, 2.0)
    with pytest.raises(DimensionError):
        rec.backward(y)


def test_grad_check_identity_and_quadratic():
    x = param([0.3, -1.2, 2.0])
    assert grad_check(lambda: total(x), [x]) < 1e-9
    rng = np.random.default_rng(5)
    m = rng.normal(size=(3, 3))
    a = Tensor(m + m.T)
    col = param(rng.normal(size=(3, 1)))

    def quad():
        return total(matmul(transpose(col), matmul(a, col)))

    assert grad_check(quad, [col]) < 1e-6
    with Record() as rec:
        loss = quad()
    np.testing.assert_allclose(rec.backward(loss)[col], 2 * a.data @ col.data, atol=1e-12)


def test_grad_check_random_three_layer():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(5, 4)))
    w1, w2, w3 = (param(rng.normal(size=s)) for s in [(4, 6), (6, 6), (6, 3)])

    def fn():
        h = tanh(matmul(x, w1))
        h = sigmoid(matmul(h, w2))
        return softmax_cross_entropy(matmul(h, w3), [0, 1, 2, 0, 1])

    assert grad_check(fn, [w1, w2, w3]) < 1e-4


def test_grad_check_flags_non_finite():
    x = param([1.0])
    with pytest.raises(NonFiniteError):
        grad_check(lambda: total(scale(x, float("inf"))), [x])


@pytest.mark.parametrize("kind", list(primitive_cases(np.random.default_rng(0)).keys()))
def test_every_primitive_gradient_20_seeds(kind):
    for seed in range(20):
        fn, params = primitive_cases(np.random.default_rng(seed))[kind]
        assert grad_check(fn, params) < 1e-4, (kind, seed)


def test_replay_is_bitwise_identical():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(4, 3)))
    w = param(rng.normal(size=(3, 3)))
    with Record() as rec:
        y = tanh(matmul(x, w))
        loss = total(hadamard(y, y))
    first = rec.replay()
    second = rec.replay()
    assert len(first) == len(second)
    for u, v in zip(first, second):
        assert u.tobytes() == v.tobytes()
    assert first[loss._node].tobytes() == loss.data.tobytes()
    w.data[0, 0] += 1.0
    assert rec.replay()[loss._node] != loss.data


def test_record_is_topological():
    x = param(np.ones((2, 2)))
    with Record() as rec:
        total(sigmoid(matmul(x, x)))
    produced = set()
    for e in rec.entries:
        for i in e.inputs:
            assert rec.is_leaf(i) or i in produced
        assert e.output not in produced
        produced.add(e.output)


def test_untracked_ops_outside_record():
    x = param(np.ones(3))
    y = sigmoid(x)
    assert y._record is None
