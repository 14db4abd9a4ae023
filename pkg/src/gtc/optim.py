"""Adam with bias correction, operating in place on :class:`Parameter` lists."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError


def zero_grad(params):
    for p in params:
        p.zero_grad()


class Adam:
    """Adam optimizer state: first/second moment buffers and the step counter.

    ``step`` applies one update using the gradients accumulated on each
    parameter and clears the accumulators afterwards.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr=None):
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr if lr is None else lr,
                  self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        zero_grad(self.params)


def adam_step(params, m, v, lr, beta1, beta2, eps, t):
    if t < 1:
        raise ContractError(f"Adam step count must be >= 1, got {t}")
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        g = p.grad
        mp, vp = m[p.name], v[p.name]
        mp *= beta1
        mp += (1.0 - beta1) * g
        vp *= beta2
        vp += (1.0 - beta2) * g * g
        p.data -= lr * (mp / c1) / (np.sqrt(vp / c2) + eps)
        p.zero_grad()
