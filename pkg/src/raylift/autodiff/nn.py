"""Layers built from :mod:`raylift.autodiff.ops`."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor, resolve_dtype


class Module:
    """Container with named parameters, buffers and a train/eval flag.

    Children and parameters are discovered from attributes in assignment
    order, which fixes the parameter naming used by checkpoints.
    """

    training = True

    def named_parameters(self, prefix=""):
        for name, v in vars(self).items():
            if isinstance(v, Tensor) and v.requires_grad:
                yield prefix + name, v
            elif isinstance(v, Module):
                yield from v.named_parameters(f"{prefix}{name}.")
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield from m.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, v in vars(self).items():
            if name.startswith("buf_") and isinstance(v, np.ndarray):
                yield prefix + name, v
            elif isinstance(v, Module):
                yield from v.named_buffers(f"{prefix}{name}.")
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield from m.named_buffers(f"{prefix}{name}.{i}.")

    def modules(self):
        yield self
        for v in vars(self).values():
            if isinstance(v, Module):
                yield from v.modules()
            elif isinstance(v, (list, tuple)):
                for m in v:
                    if isinstance(m, Module):
                        yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self):
        return int(np.sum([p.data.size for p in self.parameters()]))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        out = {f"param/{n}": p.data for n, p in self.named_parameters()}
        out.update({f"buffer/{n}": b for n, b in self.named_buffers()})
        return out

    def load_state_dict(self, state):
        for n, p in self.named_parameters():
            arr = state[f"param/{n}"]
            if arr.shape != p.shape:
                raise ValueError(f"{n}: stored shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)
        for n, b in self.named_buffers():
            b[...] = state[f"buffer/{n}"]


def _uniform(rng, shape, bound, dtype):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype="float64"):
        dt = resolve_dtype(dtype)
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _uniform(rng, (n_in, n_out), bound, dt)
        self.bias = _uniform(rng, (n_out,), bound, dt)

    def __call__(self, x):
        return ops.add(ops.matmul(x, self.weight), self.bias)


class TemporalConv(Module):
    def __init__(self, n_in, n_out, kernel, dilation, rng, dtype="float64"):
        dt = resolve_dtype(dtype)
        bound = 1.0 / math.sqrt(n_in * kernel)
        self.weight = _uniform(rng, (kernel, n_in, n_out), bound, dt)
        self.bias = _uniform(rng, (n_out,), bound, dt)
        self.dilation = dilation

    @property
    def kernel(self):
        return self.weight.shape[0]

    def __call__(self, x):
        return ops.temporal_conv1d(x, self.weight, self.bias, self.dilation)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype="float64"):
        dt = resolve_dtype(dtype)
        self.gamma = Tensor(np.ones(channels, dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dt), requires_grad=True)
        self.buf_mean = np.zeros(channels, dtype=dt)
        self.buf_var = np.ones(channels, dtype=dt)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return ops.batchnorm1d(x, self.gamma, self.beta, self.buf_mean, self.buf_var,
                               self.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p, rng):
        if not 0 <= p < 1:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng

    def __call__(self, x):
        return ops.dropout(x, self.p, self.training, self.rng)


class DenseBlock(Module):
    """Linear, batch norm, ReLU, dropout."""

    def __init__(self, n_in, n_out, rng, dropout=0.25, dtype="float64"):
        self.linear = Linear(n_in, n_out, rng, dtype)
        self.norm = BatchNorm1d(n_out, dtype=dtype)
        self.drop = Dropout(dropout, rng)

    def __call__(self, x):
        return self.drop(ops.relu(self.norm(self.linear(x))))


class ConvBlock(Module):
    """Temporal convolution, batch norm, ReLU, dropout."""

    def __init__(self, n_in, n_out, kernel, dilation, rng, dropout=0.25, dtype="float64"):
        self.conv = TemporalConv(n_in, n_out, kernel, dilation, rng, dtype)
        self.norm = BatchNorm1d(n_out, dtype=dtype)
        self.drop = Dropout(dropout, rng)

    def __call__(self, x):
        return self.drop(ops.relu(self.norm(self.conv(x))))
