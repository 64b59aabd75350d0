import math
import threading

import numpy as np
import pytest

from mindcross.engine import Tape, Tensor, backward, finite_difference_check, no_grad
from mindcross.engine import functional as F
from mindcross.utilities.errors import ConfigError, DimensionError


def test_product_gradient():
    """Test that d/da sum(a * b) equals b."""
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    with Tape():
        backward(F.sum_(a * b))
    np.testing.assert_array_equal(a.grad, [3.0, 4.0])
    np.testing.assert_array_equal(b.grad, [1.0, 2.0])


def test_broadcast_bias_gradient_is_summed():
    """Test that a row-broadcast bias receives the column sums."""
    x = Tensor(np.ones((2, 3)))
    bias = Tensor(np.zeros(3), requires_grad=True)
    with Tape():
        backward(F.sum_(F.add(x, bias)))
    np.testing.assert_array_equal(bias.grad, [2.0, 2.0, 2.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape(), pytest.raises(DimensionError):
        backward(F.scale(x, 2.0))


def test_retained_graph_accumulates_into_leaves():
    """Test that two backward passes over a retained tape add up."""
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = F.sum_(F.square(x))
        backward(loss, retain_graph=True)
        assert len(tape) > 0
        backward(loss)
        assert len(tape) == 0
    np.testing.assert_array_equal(x.grad, [4.0, -8.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = F.exp(x)
        assert len(tape) == 0
        assert y.is_leaf


def test_recording_is_thread_local():
    """Test that no_grad on one thread does not disable recording on another."""
    x = Tensor([1.0], requires_grad=True)
    seen = {}

    def worker():
        with Tape() as tape:
            F.exp(x)
            seen["entries"] = len(tape)

    with no_grad():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen["entries"] == 1


def test_grad_reverse_forward_identity_and_negation():
    x = Tensor(np.array([0.3, -1.7, 2.5]), requires_grad=True)
    with Tape():
        y = F.grad_reverse(x, 0.5)
        assert y.data.tobytes() == x.data.tobytes()
        backward(F.sum_(F.mul(y, np.array([1.0, 2.0, 3.0]))))
    np.testing.assert_array_equal(x.grad, [-0.5, -1.0, -1.5])


def test_grad_reverse_rejects_non_positive_scale():
    with pytest.raises(ConfigError):
        F.grad_reverse(Tensor([1.0]), 0.0)


def test_dropout_identity_when_not_training():
    x = Tensor(np.ones((2, 2)))
    assert F.dropout(x, 0.5, training=False) is x
    with pytest.raises(ConfigError):
        F.dropout(x, 1.0, training=False)


def test_dropout_preserves_expectation(rng):
    x = Tensor(np.ones((200, 50)))
    y = F.dropout(x, 0.2, training=True, rng=rng)
    kept = y.data[y.data > 0]
    assert np.allclose(kept, 1.25)
    assert abs(y.data.mean() - 1.0) < 0.05


def test_adaptive_max_pool_bins_and_gradient():
    x = Tensor(np.array([[1.0, 5.0, 2.0, 4.0, 3.0, 0.0]]), requires_grad=True)
    with Tape():
        y = F.adaptive_max_pool_1d(x, 3)
        np.testing.assert_array_equal(y.data, [[5.0, 4.0, 3.0]])
        backward(F.sum_(y))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]])
    with pytest.raises(DimensionError):
        F.adaptive_max_pool_1d(x, 7)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_hadamard_requires_equal_shapes():
    with pytest.raises(DimensionError):
        F.hadamard(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_gelu_matches_erf_form():
    v = 0.7
    expected = v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))
    assert F.gelu(Tensor([v])).item() == pytest.approx(expected, abs=1e-15)


def test_layer_norm_standardizes_rows(rng):
    x = Tensor(rng.standard_normal((4, 6)) * 3.0 + 1.0)
    y = F.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(y.data.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(axis=1), 1.0, rtol=1e-4)


@pytest.mark.parametrize("op", ["gelu", "layer_norm", "softmax", "log_softmax", "l2_normalize",
                                "concat", "div", "sqrt", "standardize_columns"])
def test_primitives_pass_finite_differences(op, rng):
    """Test analytic gradients of each primitive against central differences."""
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    gain = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    bias = Tensor(rng.standard_normal(4), requires_grad=True)
    other = Tensor(rng.uniform(1.0, 2.0, (3, 4)), requires_grad=True)
    coeff = rng.standard_normal((3, 4))

    def f():
        if op == "gelu":
            y = F.gelu(x)
        elif op == "layer_norm":
            y = F.layer_norm(x, gain, bias)
        elif op == "softmax":
            y = F.softmax(x)
        elif op == "log_softmax":
            y = F.log_softmax(x)
        elif op == "l2_normalize":
            y = F.l2_normalize(x)
        elif op == "concat":
            y = F.concat_last(x, other)
            return F.sum_(F.mul(y, np.concatenate([coeff, coeff], axis=1)))
        elif op == "standardize_columns":
            y = F.standardize_columns(x)
        elif op == "div":
            y = F.div(x, other)
        else:
            y = F.sqrt(other)
        return F.sum_(F.mul(y, coeff))

    params = {"layer_norm": [x, gain, bias], "div": [x, other], "sqrt": [other],
              "concat": [x, other]}.get(op, [x])
    assert finite_difference_check(f, params) < 1e-5


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.standard_normal((5, 7)) * 20.0)
    np.testing.assert_allclose(F.softmax(x).data.sum(axis=1), 1.0, atol=1e-12)


def test_log_softmax_matches_log_of_softmax(rng):
    x = Tensor(rng.standard_normal((4, 6)) * 3.0)
    np.testing.assert_allclose(F.log_softmax(x).data, np.log(F.softmax(x).data), atol=1e-10)


def test_layer_norm_hand_rows():
    """Test that a constant row maps to zeros and (1, 3) maps to about (-1, 1)."""
    ones, zeros = Tensor(np.ones(2)), Tensor(np.zeros(2))
    y = F.layer_norm(Tensor([[4.0, 4.0], [1.0, 3.0]]), ones, zeros)
    np.testing.assert_array_equal(y.data[0], [0.0, 0.0])
    np.testing.assert_allclose(y.data[1], [-1.0, 1.0], atol=1e-5)


def test_matmul_hand_cases():
    m = np.array([[1.0, -2.0], [0.5, 3.0]])
    np.testing.assert_array_equal(F.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    y = F.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(y.data, [[11.0]])


def test_adaptive_max_pool_on_a_vector():
    y = F.adaptive_max_pool_1d(Tensor([1.0, 5.0, 2.0, 4.0]), 2)
    np.testing.assert_array_equal(y.data, [5.0, 4.0])


@pytest.mark.parametrize("op", ["matmul", "hadamard"])
def test_products_pass_finite_differences(op, rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2) if op == "matmul" else (3, 4)), requires_grad=True)
    coeff = rng.standard_normal((3, 2) if op == "matmul" else (3, 4))

    def f():
        y = F.matmul(a, b) if op == "matmul" else F.hadamard(a, b)
        return F.sum_(F.mul(y, coeff))

    assert finite_difference_check(f, [a, b]) < 1e-5


def test_backward_is_linear_in_the_loss(rng):
    """Test that grad(a*L1 + b*L2) equals a*grad(L1) + b*grad(L2)."""
    x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)

    def grad_of(loss_fn):
        x.zero_grad()
        with Tape():
            backward(loss_fn())
        return x.grad.copy()

    def l1():
        return F.sum_(F.gelu(x))

    def l2():
        return F.sum_(F.square(F.softmax(x)))

    combined = grad_of(lambda: F.add(F.scale(l1(), 2.0), F.scale(l2(), -0.5)))
    np.testing.assert_allclose(combined, 2.0 * grad_of(l1) - 0.5 * grad_of(l2), atol=1e-12)


def test_standardize_columns_gives_zero_mean_unit_variance(rng):
    x = Tensor(rng.standard_normal((16, 3)) * np.array([0.5, 4.0, 20.0]) + 7.0)
    y = F.standardize_columns(x)
    np.testing.assert_allclose(y.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(axis=0), 1.0, rtol=1e-3)
    with pytest.raises(DimensionError):
        F.standardize_columns(Tensor(np.ones(3)))
