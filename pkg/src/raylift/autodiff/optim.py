"""Adam with per-epoch exponential learning-rate decay."""

from __future__ import annotations

import numpy as np


def exp_lr_decay(lr0, epoch, decay=0.99):
    return lr0 * decay**epoch


def adam_step(params, grads, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update.  ``t`` is the 1-based step count."""
    bc1 = 1 - beta1**t
    bc2 = 1 - beta2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        if g is None:
            continue
        if mi.shape != g.shape or vi.shape != g.shape:
            raise ValueError("moment buffers must match gradient shapes")
        dt = p.dtype.type
        mi *= dt(beta1)
        mi += dt(1 - beta1) * g
        vi *= dt(beta2)
        vi += dt(1 - beta2) * (g * g)
        mhat = mi / dt(bc1)
        vhat = vi / dt(bc2)
        p.data = p.data - dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        adam_step(self.params, [p.grad for p in self.params], self.m, self.v, self.t,
                  self.lr, self.beta1, self.beta2, self.eps)

    def state_dict(self):
        out = {f"adam/m/{i}": m for i, m in enumerate(self.m)}
        out.update({f"adam/v/{i}": v for i, v in enumerate(self.v)})
        return out

    def load_state_dict(self, state, t):
        for i in range(len(self.params)):
            self.m[i][...] = state[f"adam/m/{i}"]
            self.v[i][...] = state[f"adam/v/{i}"]
        self.t = int(t)
