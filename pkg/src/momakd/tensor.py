"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one operand requires a gradient. Outside a tape (or inside
:func:`no_grad`) they are plain numpy computations, which is how detached
forward passes are expressed::

    with Tape() as tape:
        loss = mean_all(relu(x @ w))
    tape.backward(loss)
    w.grad
"""
import threading

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateInputError, DimensionError

_local = threading.local()


def _stack():
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def active_tape():
    st = _stack()
    return st[-1] if st else None


class Tensor:
    """A dense array plus an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self):
        return Tensor(self.values, requires_grad=False)

    def numpy(self):
        return self.values.copy()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(self, 1.0 / float(c))

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x, shape):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


class Tape:
    """Single-use record of differentiable operations.

    Use as a context manager to make it the active tape, then call
    :meth:`backward` exactly once.
    """

    def __init__(self):
        self._records = []
        self._produced = set()
        self._used = False

    def __enter__(self):
        if self._used:
            raise ContractError("tape already consumed by backward()")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        if not st or st[-1] is not self:
            raise ContractError("tape contexts exited out of order")
        st.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out, parents, vjp):
        self._records.append((out, parents, vjp))
        self._produced.add(id(out))

    def backward(self, loss):
        """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``."""
        if self._used:
            raise ContractError("tape reused: a tape supports one backward pass")
        if loss.size != 1 or loss.values.ndim > 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        self._used = True
        grads = {id(loss): np.ones_like(loss.values)}
        touched = {id(loss): loss}
        for out, parents, vjp in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for p, gp in zip(parents, vjp(g)):
                if gp is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + gp
                else:
                    grads[key] = gp
                    touched[key] = p
        for key, t in touched.items():
            t.grad = grads[key]
        self._records = []


def backward(loss, tape):
    tape.backward(loss)


class no_grad:
    """Context in which operations are not recorded on any tape."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


def _wrap(values):
    # results of ops are fresh arrays; skip the defensive copy in __init__
    out = Tensor.__new__(Tensor)
    out.values = values if values.dtype == np.float64 else values.astype(np.float64)
    out.requires_grad = False
    out.grad = None
    out.name = None
    return out


def _emit(values, parents, vjp):
    out = _wrap(np.asarray(values))
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    return out


def _need_2d(x, op):
    if x.values.ndim != 2:
        raise DimensionError(f"{op} expects a 2-d tensor, got shape {x.shape}")


# ---------------------------------------------------------------- operations

def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.values, b.values
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, c):
    return _emit(x.values * c, (x,), lambda g: (g * c,))


def add_bias(x, b):
    """Row-wise bias: ``x[i, :] + b`` for x of shape (m, n) and b of shape (n,)."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    return _emit(x.values + b.values, (x, b), lambda g: (g, g.sum(axis=0)))


def relu(x):
    mask = x.values > 0
    return _emit(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def transpose(x):
    _need_2d(x, "transpose")
    return _emit(x.values.T.copy(), (x,), lambda g: (g.T,))


def softmax_rows(x):
    _need_2d(x, "softmax_rows")
    y = kernels.softmax_rows(x.values)
    return _emit(y, (x,), lambda g: (kernels.softmax_rows_backward(y, g),))


def log_softmax_rows(x):
    _need_2d(x, "log_softmax_rows")
    y = kernels.log_softmax_rows(x.values)
    return _emit(y, (x,), lambda g: (kernels.log_softmax_rows_backward(y, g),))


def multi_head_attention(q, k, v, heads):
    """Row-batch attention per column block of width ``q.shape[1] // heads``.

    Returns ``(output, weights)`` where ``weights`` has shape
    ``(heads, n, n)`` and is not differentiable.
    """
    for t in (q, k, v):
        _need_2d(t, "multi_head_attention")
    if not (q.shape == k.shape == v.shape) or q.shape[1] % heads:
        raise DimensionError(f"attention operands {q.shape}, {k.shape}, {v.shape} with {heads} heads")
    qv, kv, vv = q.values, k.values, v.values
    out, weights = kernels.mha_forward(qv, kv, vv, heads)
    return _emit(out, (q, k, v), lambda g: kernels.mha_backward(qv, kv, vv, weights, g, heads)), weights


def l2_normalize_rows(x):
    _need_2d(x, "l2_normalize_rows")
    norms = np.sqrt((x.values * x.values).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norms[:, 0] < 1e-12)
    if bad.size:
        raise DegenerateInputError(f"cannot normalize zero-norm row {int(bad[0])}")
    y = x.values / norms

    def vjp(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _emit(y, (x,), vjp)


def sum_all(x):
    shape = x.shape
    return _emit(np.array(x.values.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x):
    n = x.size
    shape = x.shape
    return _emit(np.array(x.values.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def sum_rows(x):
    """Sum along columns: (m, n) -> (m, 1)."""
    _need_2d(x, "sum_rows")
    n = x.shape[1]
    return _emit(x.values.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1),))


def slice_cols(x, start, stop):
    _need_2d(x, "slice_cols")
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"column slice [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(x.values[:, start:stop].copy(), (x,), vjp)


def concat_cols(parts):
    parts = list(parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.values.ndim != 2 for p in parts):
        raise DimensionError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([p.values for p in parts], axis=1), tuple(parts), vjp)


def pick(x, index):
    """Per-row gather ``out[i] = x[i, index[i]]``; returns shape (m,)."""
    _need_2d(x, "pick")
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (x.shape[0],):
        raise DimensionError(f"pick index shape {index.shape} for tensor {x.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows, index] = g
        return (full,)

    return _emit(x.values[rows, index], (x,), vjp)


# ---------------------------------------------------------------- gradient checks

def numerical_grad(fn, tensor, h=1e-5):
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``tensor.values``.

    ``fn`` must recompute from ``tensor.values`` on each call.
    """
    flat = tensor.values.reshape(-1)
    out = np.zeros_like(flat)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = float(fn().values)
            flat[k] = orig - h
            fm = float(fn().values)
            flat[k] = orig
            out[k] = (fp - fm) / (2 * h)
    return out.reshape(tensor.shape)


def relative_error(analytic, numeric, floor=1e-5):
    """Max elementwise ``|a - n| / max(|a| + |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float((np.abs(a - n) / denom).max())
