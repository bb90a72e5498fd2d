"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from .tensor import Tape


def numeric_grad(fn, tensors, eps=1e-5):
    """Central differences of the scalar ``fn()`` w.r.t. each tensor's data."""
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            hi = float(fn().data.reshape(()))
            flat[i] = old - eps
            lo = float(fn().data.reshape(()))
            flat[i] = old
            gf[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]


def relative_error(a, b):
    """``|a - b| / max(|a|, |b|)`` over the flattened gradients."""
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, tensors, eps=1e-5):
    """Relative error between tape and finite-difference gradients.

    ``fn`` must be a deterministic function of the tensors' current data
    returning a scalar tensor; tensors need ``requires_grad``.
    """
    ana = analytic_grad(fn, tensors)
    num = numeric_grad(fn, tensors, eps)
    return relative_error(ana, num)
