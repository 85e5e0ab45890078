import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stwa import tensor as T
from stwa.tensor import ShapeError, Tape, Tensor, grad_check

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
    assert out.data.tolist() == [[3], [4]]


def test_matmul_row_col():
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_finite_difference():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((4, 3)))
    b = Tensor(rng.standard_normal((3, 2)))
    assert grad_check(lambda: T.tsum(T.tanh(a @ b)), [a, b]) < 1e-6


def test_batched_matmul_broadcasts_shared_right_operand():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((2, 5, 4, 3)))
    w = Tensor(rng.standard_normal((3, 2)))
    np.testing.assert_allclose((a @ w).data, a.data @ w.data)
    assert grad_check(lambda: T.tsum(T.mul(a @ w, a @ w)), [a, w]) < 1e-6


@pytest.mark.parametrize("x, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0, 1000.0], [1 / 3] * 3),
    ([0.0, math.log(3)], [0.25, 0.75]),
])
def test_softmax_values(x, expected):
    out = T.softmax_lastdim(Tensor(x)).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(x):
    out = T.softmax_lastdim(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)


def test_activation_spot_values():
    assert T.tanh(Tensor(0.0)).item() == 0.0
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.relu(Tensor(-1.0)).item() == 0.0


def test_sigmoid_extreme_inputs_stay_finite():
    out = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert out.tolist() == [0.0, 1.0]


def test_backward_square():
    w = Tensor([1.0, 2.0])
    with Tape() as tape:
        tape.watch(w)
        loss = T.tsum(T.mul(w, w))
        grads = tape.backward(loss)
    assert grads[w.tape_id].tolist() == [2.0, 4.0]


def test_unused_leaf_gets_zero_gradient():
    w, v = Tensor([1.0, 2.0]), Tensor([5.0, 6.0, 7.0])
    with Tape() as tape:
        tape.watch(w, v)
        grads = tape.backward(T.tsum(w))
    assert grads[v.tape_id].tolist() == [0.0, 0.0, 0.0]


def test_backward_rejects_non_scalar():
    w = Tensor([1.0, 2.0])
    with Tape() as tape:
        tape.watch(w)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(w * 2.0)


def test_ops_outside_tape_are_not_recorded():
    w = Tensor([1.0])
    out = w * 3.0
    assert out.tape is None


def test_reused_node_accumulates():
    w = Tensor([3.0])
    with Tape() as tape:
        tape.watch(w)
        y = w * 2.0
        grads = tape.backward(T.tsum(y + y + w))
    assert grads[w.tape_id].tolist() == [5.0]


def test_grad_check_square():
    w = Tensor([1.0])
    assert grad_check(lambda: T.tsum(T.mul(w, w)), [w]) < 1e-8


def test_grad_check_non_finite_raises():
    w = Tensor([0.0])
    with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(FloatingPointError):
        grad_check(lambda: T.tsum(T.log(w)), [w])


def test_complex_step_agrees_with_central_differences():
    rng = np.random.default_rng(2)
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 2)))

    def f():
        return T.tsum(T.softmax_lastdim(T.sigmoid(a @ b)) * Tensor([1.0, 3.0]) + T.relu(a @ b))

    assert T.complex_step_check(f, [a, b]) < 1e-10
    assert grad_check(f, [a, b]) < 1e-6
    assert a.data.dtype == np.float64


def test_elementwise_and_reduction_gradients():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    y = Tensor(rng.uniform(0.5, 2.0, (3, 4)))

    def f():
        z = T.exp(x * 0.3) * y - T.log(y) + T.tabs(x)
        z = T.permute(z, (1, 0, 2))
        parts = T.split(z, [1, 3], axis=-1)
        w = T.concat([parts[1], parts[0]], axis=-1)
        return T.mean(T.tsum(w, axis=0) * T.take(w, (0,)))

    assert grad_check(f, [x, y]) < 1e-6


def test_stack_expand_reshape_gradients():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((3, 2)))

    def f():
        s = T.stack([x, T.sigmoid(x)], axis=0)
        e = T.expand(T.reshape(s, (2, 6)), (4, 2, 6))
        return T.tsum(T.mul(e, e) @ Tensor(np.arange(6.0).reshape(6, 1)))

    assert grad_check(f, [x]) < 1e-6


def test_mixed_suffix_broadcast_rejected():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(1, 3))
@settings(max_examples=30)
def test_concat_split_roundtrip(sizes, rows):
    rng = np.random.default_rng(sum(sizes))
    parts = [Tensor(rng.standard_normal((rows, s))) for s in sizes]
    back = T.split(T.concat(parts, axis=-1), sizes, axis=-1)
    for a, b in zip(parts, back):
        assert np.array_equal(a.data, b.data)


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_relu_gradient_is_indicator(x):
    w = Tensor(x)
    with Tape() as tape:
        tape.watch(w)
        grads = tape.backward(T.tsum(T.relu(w)))
    assert np.array_equal(grads[w.tape_id], (x > 0).astype(float))


def test_item_requires_single_element():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()
