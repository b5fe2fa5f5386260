import numpy as np
import pytest

from pfcnet import tensor as T
from pfcnet.errors import ContractError
from pfcnet.optim import grad_check
from pfcnet.tensor import Tensor, backward


def test_relu_subgradient():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    backward(T.relu(x).sum())
    assert np.array_equal(x.grad, [0.0, 1.0])


def test_product_rule():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    backward(T.mul(x, y).sum())
    assert np.array_equal(x.grad, y.data)
    assert np.array_equal(y.grad, x.data)


def test_gradients_accumulate_until_cleared():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    loss = T.mul(x, x).sum()
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    assert np.allclose(x.grad, 2 * first)
    x.clear_grad()
    backward(loss)
    assert np.allclose(x.grad, first)


def test_non_scalar_loss_rejected():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        backward(T.relu(x))


def test_constant_loss_leaves_grad_untouched():
    x = Tensor(np.ones(4), requires_grad=True)
    backward(Tensor(np.asarray(5.0)))
    assert x.grad is None


def test_shared_subexpression():
    # q = (x + y) * (x + 1): x feeds two paths
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = Tensor(np.array([-4.0]), requires_grad=True)
    q = T.mul(T.add(x, y), T.add(x, 1.0))
    backward(q.sum())
    assert x.grad[0] == pytest.approx((2.0 - 4.0) + (2.0 + 1.0))
    assert y.grad[0] == pytest.approx(3.0)


def test_broadcast_bias_grad_sums_over_batch():
    x = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    backward(T.add(x, b).sum())
    assert np.array_equal(b.grad, [4.0, 4.0, 4.0])


def test_no_grad_suppresses_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad
    backward(y.sum())
    assert x.grad is None


class TestGradCheck:
    def test_sum_of_squares_is_nearly_exact(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(-2, 2, size=(4, 6)))
        report = grad_check(lambda t: T.mul(t, t).sum(), x, rtol=1e-8)
        assert report.passed
        assert np.allclose(report.analytic, 2 * x.data.astype(np.float64), atol=1e-12)

    def test_constant_function(self):
        x = Tensor(np.ones(5))
        report = grad_check(lambda t: Tensor(np.asarray(3.0)), x)
        assert report.max_rel_error == 0.0
        assert np.array_equal(report.analytic, np.zeros(5))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_composite_ops(self, seed):
        rng = np.random.default_rng(seed)
        w = Tensor(rng.normal(size=(5, 3)).astype(np.float64))

        def f(t):
            h = T.relu(T.matmul(t, w))
            g = T.sigmoid(h)
            return T.mul(g, g).mean()

        x = Tensor(rng.normal(size=(2, 5)) + 0.3 * np.sign(rng.normal(size=(2, 5))))
        report = grad_check(f, x, rtol=1e-4)
        assert report.passed, report.max_rel_error

    def test_conv_pool_concat_pipeline(self):
        rng = np.random.default_rng(7)
        w = Tensor(rng.normal(size=(4, 2, 3, 3)).astype(np.float64))

        def f(t):
            h = T.relu(T.conv2d(t, w, stride=2, padding=1))
            avg = T.pool2d_global(h, "average")
            mx = T.pool2d_global(h, "max")
            return T.mul(T.concat([avg, mx], axis=1), 0.5).sum()

        x = Tensor(rng.normal(size=(2, 2, 6, 5)))
        report = grad_check(f, x, rtol=1e-4)
        assert report.passed, report.max_rel_error

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(3, 4)))
        report = grad_check(lambda t: T.softmax_cross_entropy(t, [0, 2, 3]), x)
        assert report.passed, report.max_rel_error
