import numpy as np
import pytest

from pfcnet import tensor as T
from pfcnet.errors import ContractError
from pfcnet.optim import Parameter, adam_step
from pfcnet.tensor import Tensor, backward


def adam_oracle(values, grads, lr, b1, b2, eps, steps):
    """Plain-python reference of the bias-corrected Adam recursion."""
    v = np.array(values, dtype=np.float64)
    m = np.zeros_like(v)
    s = np.zeros_like(v)
    for t in range(1, steps + 1):
        g = np.asarray(grads[t - 1], dtype=np.float64)
        m = b1 * m + (1 - b1) * g
        s = b2 * s + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        s_hat = s / (1 - b2 ** t)
        v = v - lr * m_hat / (np.sqrt(s_hat) + eps)
    return v


def test_single_step_hand_value():
    # t=1, g=1: m_hat = v_hat = 1, so the move is lr / (1 + eps)
    p = Parameter(np.array([1.0]))
    p.value.grad = np.array([1.0])
    adam_step(p, lr=0.0003, beta1=0.5, beta2=0.999, eps=1e-8)
    moved = 1.0 - p.value.data[0]
    assert moved == pytest.approx(0.0003, rel=1e-6)
    assert p.step_count == 1


def test_zero_gradient_leaves_parameter_unchanged():
    p = Parameter(np.array([2.0, -3.0]))
    p.value.grad = np.zeros(2)
    adam_step(p, lr=0.1)
    assert np.array_equal(p.value.data, [2.0, -3.0])


def test_step_count_increments():
    p = Parameter(np.array([0.0]))
    for _ in range(2):
        p.value.grad = np.array([1.0])
        adam_step(p, lr=0.01)
    assert p.step_count == 2


def test_missing_gradient_is_contract_error():
    with pytest.raises(ContractError, match="no gradient"):
        adam_step(Parameter(np.zeros(3)), lr=0.01)


def test_bad_betas_rejected():
    p = Parameter(np.zeros(1))
    p.value.grad = np.ones(1)
    with pytest.raises(ContractError):
        adam_step(p, lr=0.1, beta1=1.0)


def test_gradient_buffer_left_intact():
    p = Parameter(np.zeros(2))
    p.value.grad = np.array([1.0, 2.0])
    adam_step(p, lr=0.01)
    assert np.array_equal(p.grad, [1.0, 2.0])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_many_steps_match_oracle(seed):
    rng = np.random.default_rng(seed)
    init = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(7)]
    p = Parameter(init.astype(np.float64))
    for g in grads:
        p.value.grad = g.copy()
        adam_step(p, lr=0.05, beta1=0.5, beta2=0.999, eps=1e-8)
        p.clear_grad()
    expected = adam_oracle(init, grads, 0.05, 0.5, 0.999, 1e-8, 7)
    assert np.allclose(p.value.data, expected, atol=1e-12)


def test_moments_share_parameter_shape():
    p = Parameter(np.zeros((3, 4)))
    assert p.adam_m.shape == p.adam_v.shape == p.value.data.shape


def test_parameter_participates_in_graph():
    p = Parameter(np.array([[1.0, 2.0]]))
    w = Tensor(np.array([[3.0], [4.0]]))
    backward(T.matmul(p.value, w).sum())
    assert np.array_equal(p.grad, [[3.0, 4.0]])
