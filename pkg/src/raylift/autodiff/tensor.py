"""Dense tensors and the reverse-mode tape."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

MAX_NDIM = 4
DTYPES = {"float32": np.float32, "float64": np.float64}

_tapes = []


def resolve_dtype(dtype):
    if isinstance(dtype, str):
        return np.dtype(DTYPES[dtype])
    return np.dtype(dtype)


class Tensor:
    """A numpy buffer plus an optional gradient slot.

    ``node`` is the index of the tape record that produced the tensor, or
    ``None`` for leaves.  Leaves with ``requires_grad`` receive ``grad`` on
    :meth:`Tape.backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_NDIM:
            raise ShapeMismatch(f"tensors have at most {MAX_NDIM} axes, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar; see ops for the rules
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops executed inside it are recorded when any
    input needs a gradient.  :meth:`backward` walks the records in exact
    reverse order.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward):
        out.node = len(self.records)
        out.requires_grad = True
        self.records.append((out, tuple(inputs), backward))
        return out

    def _owns(self, t):
        return t.node is not None and t.node < len(self.records) and self.records[t.node][0] is t

    def backward(self, loss, seed=None):
        if not self._owns(loss):
            raise ValueError("loss was not produced on this tape")
        if seed is None:
            if loss.data.size != 1:
                raise ShapeMismatch(f"backward needs a scalar loss or an explicit seed, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        grads = {loss.node: np.asarray(seed, dtype=loss.dtype)}
        leaves = {}
        for idx in range(loss.node, -1, -1):
            out, inputs, fn = self.records[idx]
            g = grads.pop(idx, None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeMismatch(f"gradient shape {gi.shape} does not match input {inp.shape}")
                if self._owns(inp):
                    grads[inp.node] = grads[inp.node] + gi if inp.node in grads else gi
                else:
                    key = id(inp)
                    if key in leaves:
                        leaves[key][1] = leaves[key][1] + gi
                    else:
                        leaves[key] = [inp, gi]
        for inp, gi in leaves.values():
            gi = gi.astype(inp.dtype, copy=False)
            inp.grad = gi if inp.grad is None else inp.grad + gi


def active_tape():
    return _tapes[-1] if _tapes else None


def maybe_record(out, inputs, backward):
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        tape.record(out, inputs, backward)
    return out
