"""Adam with bias correction, keyed by parameter name."""
import numpy as np

from .errors import ContractError


class AdamState:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.9999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params):
        adam_step(self, params)


def adam_step(state, params):
    """In-place update of every tensor in ``params`` (``{name: Tensor}``) from its ``.grad``."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"no gradient for trainable parameter {name!r}")
        if p.grad.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {p.grad.shape} != parameter shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values = p.values - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
