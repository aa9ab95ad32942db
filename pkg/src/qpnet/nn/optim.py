"""Adaptive-moment optimizer."""

import numpy as np


class Adam:
    """Adam with bias-corrected moments kept per parameter.

    Only parameters whose ``trainable`` flag is set at step time are updated;
    frozen parameters keep their values bit-for-bit.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if not p.trainable:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            if self.lr == 0:
                continue
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def adam_step(optimizer, lr=None):
    """Apply one update with an optional learning-rate override."""
    if lr is not None:
        optimizer.lr = lr
    optimizer.step()
