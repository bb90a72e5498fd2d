"""Differentiable operations.

Each op computes its forward value with numpy and, when recording, registers
a closure mapping the output gradient to one gradient per input.  Shapes are
explicit: the only implicit broadcast is adding a ``(C,)`` bias to a
``(..., C)`` tensor.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, maybe_record


def _check_dtype(*ts):
    dts = {t.dtype for t in ts}
    if len(dts) > 1:
        raise TypeError(f"mixed precision inputs {sorted(map(str, dts))}")


def _out(data, like):
    return Tensor(data.astype(like.dtype, copy=False))


def _is_bias(a, b):
    return b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]


def _reduce_bias(g, b):
    return g.reshape(-1, b.shape[0]).sum(axis=0)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b, a.dtype)
    _check_dtype(a, b)
    if a.shape == b.shape:
        out = _out(a.data + b.data, a)
        return maybe_record(out, (a, b), lambda g: (g, g))
    if _is_bias(a, b):
        out = _out(a.data + b.data, a)
        return maybe_record(out, (a, b), lambda g: (g, _reduce_bias(g, b)))
    raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} are incompatible")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, a.dtype)
    _check_dtype(a, b)
    if a.shape == b.shape:
        out = _out(a.data - b.data, a)
        return maybe_record(out, (a, b), lambda g: (g, -g))
    if _is_bias(a, b):
        out = _out(a.data - b.data, a)
        return maybe_record(out, (a, b), lambda g: (g, -_reduce_bias(g, b)))
    raise ShapeMismatch(f"sub: shapes {a.shape} and {b.shape} are incompatible")


def mul(a, b):
    """Elementwise product of equal-shape tensors (or a ``(C,)`` scale)."""
    _check_dtype(a, b)
    if a.shape == b.shape:
        out = _out(a.data * b.data, a)
        return maybe_record(out, (a, b), lambda g: (g * b.data, g * a.data))
    if _is_bias(a, b):
        out = _out(a.data * b.data, a)
        return maybe_record(out, (a, b), lambda g: (g * b.data, _reduce_bias(g * a.data, b)))
    raise ShapeMismatch(f"mul: shapes {a.shape} and {b.shape} are incompatible")


def scale(a, c):
    c = a.dtype.type(c)
    out = _out(a.data * c, a)
    return maybe_record(out, (a,), lambda g: (g * c,))


def matmul(a, b):
    """``(..., n, k) @ (k, m)``."""
    _check_dtype(a, b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = _out(a.data @ b.data, a)

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return maybe_record(out, (a, b), back)


def concat(ts, axis=-1):
    ts = [as_tensor(t) for t in ts]
    _check_dtype(*ts)
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeMismatch(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    out = _out(np.concatenate([t.data for t in ts], axis=ax), ts[0])
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return maybe_record(out, ts, back)


def slice(a, axis, start, stop):
    """``a`` restricted to ``start:stop`` along ``axis``."""
    ax = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[ax]:
        raise ShapeMismatch(f"slice [{start}:{stop}] out of range for axis {axis} of shape {a.shape}")
    idx = (np.s_[:],) * ax + (np.s_[start:stop],)
    out = _out(a.data[idx], a)

    def back(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return (ga,)

    return maybe_record(out, (a,), back)


def take(a, indices, axis):
    """Gather ``indices`` along ``axis``."""
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    out = _out(np.take(a.data, indices, axis=ax), a)

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (np.s_[:],) * ax + (indices,), g)
        return (ga,)

    return maybe_record(out, (a,), back)


def reshape(a, shape):
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {shape}") from None
    out = _out(data, a)
    return maybe_record(out, (a,), lambda g: (g.reshape(a.shape),))


def relu(a):
    mask = a.data > 0
    out = _out(np.maximum(a.data, 0), a)  # keeps NaN visible
    return maybe_record(out, (a,), lambda g: (g * mask,))


def sum(a, axis=None):
    out = _out(np.asarray(a.data.sum(axis=axis)), a)

    def back(g):
        if axis is None:
            return (np.full_like(a.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return maybe_record(out, (a,), back)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    out = _out(np.asarray(a.data.mean(axis=axis)), a)
    inv = a.dtype.type(1.0 / n)

    def back(g):
        if axis is None:
            return (np.full_like(a.data, g * inv),)
        return (np.broadcast_to(np.expand_dims(g * inv, axis), a.shape).copy(),)

    return maybe_record(out, (a,), back)


def l2_norm_per_row(a):
    """Euclidean norm over the last axis; the gradient at a zero row is zero."""
    n = np.sqrt((a.data * a.data).sum(axis=-1))
    out = _out(n, a)

    def back(g):
        safe = np.where(n > 0, n, 1)
        return (np.where((n > 0)[..., None], a.data / safe[..., None], 0) * g[..., None],)

    return maybe_record(out, (a,), back)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalisation over every axis but the last.

    In training mode the running statistics (plain arrays) are updated in
    place with ``momentum``; in eval mode they are used as is.
    """
    _check_dtype(x, gamma, beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batchnorm: input {x.shape} vs parameters {gamma.shape}, {beta.shape}")
    flat = x.data.reshape(-1, c)
    dt = x.dtype.type
    if training:
        m = flat.shape[0]
        if m < 2:
            raise ShapeMismatch("batchnorm in training mode needs at least two rows")
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (flat - mu) * inv
    out = _out((xhat * gamma.data + beta.data).reshape(x.shape), x)

    def back(g):
        g2 = g.reshape(-1, c)
        gg = (g2 * xhat).sum(axis=0)
        gb = g2.sum(axis=0)
        if training:
            m = g2.shape[0]
            gx = (gamma.data * inv / m) * (m * g2 - gb - xhat * gg)
        else:
            gx = g2 * (gamma.data * inv)
        return gx.reshape(x.shape).astype(x.dtype, copy=False), gg, gb

    return maybe_record(out, (x, gamma, beta), back)


def dropout(x, p, training, rng):
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not training or p == 0:
        out = _out(x.data, x)
        return maybe_record(out, (x,), lambda g: (g,))
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    out = _out(x.data * keep, x)
    return maybe_record(out, (x,), lambda g: (g * keep,))


def temporal_conv1d(x, w, b, dilation=1):
    """Valid 1-D convolution over time.

    ``x`` is ``(N, T, C_in)``, ``w`` is ``(k, C_in, C_out)`` and ``b`` is
    ``(C_out,)``; the result has ``T - (k - 1) * dilation`` frames.
    """
    _check_dtype(x, w, b)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[2],):
        raise ShapeMismatch(f"temporal_conv1d: input {x.shape}, kernel {w.shape}, bias {b.shape}")
    k, cin, cout = w.shape
    n, t, _ = x.shape
    t_out = t - (k - 1) * dilation
    if t_out < 1:
        raise ShapeMismatch(f"temporal_conv1d: {t} frames are too few for kernel {k} at dilation {dilation}")
    cols = np.concatenate([x.data[:, i * dilation : i * dilation + t_out] for i in range(k)], axis=-1)
    w2 = w.data.reshape(k * cin, cout)
    out = _out(cols @ w2 + b.data, x)

    def back(g):
        gcols = g @ w2.T
        gx = np.zeros_like(x.data)
        for i in range(k):
            gx[:, i * dilation : i * dilation + t_out] += gcols[..., i * cin : (i + 1) * cin]
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(w.shape)
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return maybe_record(out, (x, w, b), back)
