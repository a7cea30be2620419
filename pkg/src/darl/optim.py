"""Adam with standard bias correction, one moment state per parameter tensor."""

import numpy as np

from .autodiff import ContractError


class AdamState:
    """Per-parameter moments; m/v match the flattened parameter length."""

    def __init__(self, n, lr, beta1, beta2, eps):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = [AdamState(p.size, lr, beta1, beta2, eps) for p in self.params]

    def step(self):
        # Parameters without a gradient were not part of this backward pass
        # (e.g. frozen critics during the encoder-only step) and are skipped.
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_step(p, s)

    def zero_grads(self):
        for p in self.params:
            p.zero_grad()


def adam_step(param, state):
    if param.grad is None:
        raise ContractError("adam_step: parameter has no gradient")
    g = param.grad.reshape(-1)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.data -= update.reshape(param.shape)
