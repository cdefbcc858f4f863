import numpy as np
import pytest

from spikezip.autodiff import (
    AdamState,
    NonFiniteError,
    Tensor,
    adam_step,
    gradient_check,
    mse,
    relu,
    tensor_sum,
)


class TestTensorBasics:
    def test_non_finite_leaf_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_item_needs_scalar(self):
        with pytest.raises(ValueError):
            Tensor(np.ones(3)).item()

    def test_backward_needs_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_shared_subexpression_accumulates(self):
        a = Tensor([3.0], requires_grad=True)
        b = a * a
        (b + b).sum().backward()
        np.testing.assert_allclose(a.grad, [12.0])

    def test_broadcast_gradient_reduced(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        (a * b).sum().backward()
        np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(a.grad, [[1, 2, 3], [1, 2, 3]])

    def test_no_graph_without_requires_grad(self):
        out = Tensor(np.ones(2)) + Tensor(np.ones(2))
        assert out._backward is None

    def test_overflow_detected(self):
        a = Tensor([1e308], requires_grad=True)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            (a * 1e10).sum().backward()

    def test_non_finite_gradient_detected(self):
        a = Tensor(np.array([1e200, 1.0]), requires_grad=True)
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            mse(a * 1e200, np.zeros(2)).backward()

    def test_relu_gradient_masks_negatives(self):
        a = Tensor([-1.0, 2.0], requires_grad=True)
        tensor_sum(relu(a)).backward()
        np.testing.assert_array_equal(a.grad, [0.0, 1.0])


class TestMse:
    def test_value(self):
        np.testing.assert_allclose(mse(Tensor([1.0, 2.0]), [1.0, 4.0]).item(), 2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse(Tensor([1.0]), [1.0, 2.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        r = np.random.default_rng(seed)
        a = Tensor(r.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(r.standard_normal((3, 4)), requires_grad=True)
        assert gradient_check(lambda a, b: mse(a, b), [a, b]) < 1e-6


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the first step exactly lr * sign(g)
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        adam_step([p], AdamState(lr=0.1))
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)

    def test_matches_reference_recursion(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.standard_normal(4), requires_grad=True)
        ref = p.data.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        state = AdamState()
        for t in range(1, 6):
            g = rng.standard_normal(4)
            adam_step([p], state, grads=[g])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 1e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-12)

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        state = AdamState(lr=0.1)
        for _ in range(500):
            p.grad = None
            tensor_sum(p * p).backward()
            adam_step([p], state)
        np.testing.assert_allclose(p.data, [0.0, 0.0], atol=1e-2)

    def test_missing_gradient_is_zero(self):
        p = Tensor(np.ones(2), requires_grad=True)
        adam_step([p], AdamState())
        np.testing.assert_array_equal(p.data, np.ones(2))

    def test_state_mismatch(self):
        state = AdamState()
        adam_step([Tensor(np.ones(2), requires_grad=True)], state)
        with pytest.raises(ValueError):
            adam_step([Tensor(np.ones(2)), Tensor(np.ones(2))], state)
