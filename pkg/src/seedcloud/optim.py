"""Adam with decoupled-from-nothing (coupled) weight decay.

Decay is added to the gradient before the moment updates, i.e. classic
L2-regularized Adam. lr=0 is a legal no-op; negative lr is a config error.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def adam_step(param, grad, state, lr, betas=(0.9, 0.999), eps=1e-8,
              weight_decay=0.0):
    """One Adam update on ndarray param in place. state is a dict with keys
    step/m/v, created when empty. Returns the mutated state."""
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    b1, b2 = betas
    if not state:
        state["step"] = 0
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
    g = grad
    if weight_decay:
        g = g + weight_decay * param
    state["step"] += 1
    t = state["step"]
    state["m"] *= b1
    state["m"] += (1.0 - b1) * g
    state["v"] *= b2
    state["v"] += (1.0 - b2) * np.square(g)
    m_hat = state["m"] / (1.0 - b1 ** t)
    v_hat = state["v"] / (1.0 - b2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = [{} for _ in self.params]

    def step(self):
        for p, st in zip(self.params, self.state):
            if p.grad is None:
                continue
            adam_step(
                p.data, p.grad.astype(p.data.dtype, copy=False), st,
                self.lr, self.betas, self.eps, self.weight_decay,
            )

    def zero_grad(self):
        for p in self.params:
            p.grad = None
