import numpy as np
import pytest

from darl.autodiff import ContractError, Tensor
from darl.optim import Adam, AdamState, adam_step


def test_first_step_magnitude():
    # bias-corrected m_hat = g, v_hat = g^2, so the step is ~ -lr * sign(g)
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad = np.ones(3)
    s = AdamState(3, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step(p, s)
    np.testing.assert_allclose(p.data, -1e-3, rtol=1e-7)
    assert s.t == 1


def test_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    s = AdamState(2, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step(p, s)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_two_steps_constant_gradient():
    p = Tensor(np.zeros(1), requires_grad=True)
    s = AdamState(1, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8)
    for _ in range(2):
        p.grad = np.ones(1)
        adam_step(p, s)
    np.testing.assert_allclose(p.data, -2e-3, rtol=1e-7)
    assert s.t == 2


def test_missing_grad_is_contract_error():
    p = Tensor(np.zeros(1), requires_grad=True)
    s = AdamState(1, 1e-3, 0.9, 0.999, 1e-8)
    with pytest.raises(ContractError):
        adam_step(p, s)


def test_adam_group_skips_frozen_params():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    a.grad = np.ones(2)
    opt = Adam([a, b], lr=1e-3)
    opt.step()
    assert a.data[0] != 0.0
    np.testing.assert_array_equal(b.data, [1.0, 1.0])
    opt.zero_grads()
    assert a.grad is None
