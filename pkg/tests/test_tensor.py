import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from incres_affect.errors import ShapeMismatch
from incres_affect.tensor import (Rng, Tensor, accumulate_grad, concat, elementwise, matmul,
                                  no_grad, sigmoid, split, tanh, total, zeros_like)

from conftest import check_grads


def test_mul_forward():
    out = elementwise("mul", Tensor([1.0, 2, 3]), Tensor([4.0, 5, 6]))
    np.testing.assert_array_equal(out.data, [4, 10, 18])


def test_add_zeros_is_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_array_equal(elementwise("add", x, zeros_like(x)).data, x.data)


def test_mul_backward_matches_hand_value():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    total(elementwise("mul", a, b)).backward()
    np.testing.assert_allclose(a.grad, [3, 4], rtol=1e-12)
    assert check_grads(lambda: total(elementwise("mul", a, b)), [a]) < 1e-8


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        elementwise("add", Tensor(np.zeros(3)), Tensor(np.zeros(4)))


@pytest.mark.parametrize("kind", ["add", "sub", "mul"])
def test_elementwise_grads_random(kind):
    g = np.random.default_rng(3)
    for _ in range(10):
        a = Tensor(g.uniform(-1, 1, (3, 2)), requires_grad=True)
        b = Tensor(g.uniform(-1, 1, (3, 2)), requires_grad=True)
        w = g.uniform(-1, 1, (3, 2))
        f = lambda: total(elementwise("mul", elementwise(kind, a, b), Tensor(w)))
        assert check_grads(f, [a, b]) <= 1e-4


def test_matmul_identity_and_hand_expansion():
    m = Tensor([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    np.testing.assert_array_equal(matmul(Tensor([[1.0, 2]]), Tensor([[3.0], [4]])).data, [[11]])


def test_matmul_grad_finite_difference():
    g = np.random.default_rng(4)
    for _ in range(10):
        a = Tensor(g.uniform(-1, 1, (3, 4)), requires_grad=True)
        b = Tensor(g.uniform(-1, 1, (4, 2)), requires_grad=True)
        assert check_grads(lambda: total(matmul(a, b)), [a, b]) <= 1e-5


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_accumulate_grad_rules():
    t = Tensor([0.0, 0.0])
    accumulate_grad(t, [1, 1])
    np.testing.assert_array_equal(t.grad, [1, 1])
    t.grad = np.array([1.0, 2.0])
    accumulate_grad(t, [3, 4])
    np.testing.assert_array_equal(t.grad, [4, 6])
    with pytest.raises(ShapeMismatch):
        accumulate_grad(t, [1, 2, 3])


@given(hnp.arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)),
       hnp.arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)))
def test_accumulate_grad_commutes(a, b):
    t1, t2 = Tensor(np.zeros(5)), Tensor(np.zeros(5))
    accumulate_grad(accumulate_grad(t1, a), b)
    accumulate_grad(accumulate_grad(t2, b), a)
    np.testing.assert_array_equal(t1.grad, t2.grad)


@pytest.mark.parametrize("op", [sigmoid, tanh])
def test_activation_grads(op):
    g = np.random.default_rng(5)
    for _ in range(10):
        x = Tensor(g.uniform(-1, 1, (4, 3)), requires_grad=True)
        w = Tensor(g.uniform(-1, 1, (4, 3)))
        assert check_grads(lambda: total(elementwise("mul", op(x), w)), [x]) <= 1e-4


def test_sigmoid_extremes_are_finite():
    out = sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_slicing_reshape_transpose_grads():
    g = np.random.default_rng(6)
    x = Tensor(g.uniform(-1, 1, (2, 3, 4)), requires_grad=True)
    w = Tensor(g.uniform(-1, 1, (4, 3)))

    def f():
        y = x.transpose(0, 2, 1)[1].reshape(4, 3)
        return total(elementwise("mul", y, w))
    assert check_grads(f, [x]) <= 1e-6


def test_concat_split_round_trip_bit_exact():
    g = np.random.default_rng(7)
    a, b = Tensor(g.normal(size=(2, 3))), Tensor(g.normal(size=(2, 5)))
    back = split(concat([a, b]), [3, 5])
    np.testing.assert_array_equal(back[0].data, a.data)
    np.testing.assert_array_equal(back[1].data, b.data)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = total(elementwise("mul", x, x))
    assert not y.requires_grad and y._backward is None


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = elementwise("mul", x, x)
    total(elementwise("add", y, y)).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_rng_determinism():
    a = Rng(42).truncated_normal((50,), 0.3)
    b = Rng(42).truncated_normal((50,), 0.3)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 0.6)
    assert not np.array_equal(a, Rng(43).truncated_normal((50,), 0.3))


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)
