"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` records a node carrying
its inputs and an adjoint closure. Nodes get a monotonically increasing
sequence number, so sorting the nodes reachable from a loss by that number
gives the execution tape; :func:`backward` replays it in reverse.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from .. import kernels

_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@contextmanager
def no_grad():
    """Run ops without recording them, even on parameters."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Wrap an op result, recording it when any parent tracks gradients."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _is_scalar(t):
    return t.data.size == 1 and t.data.ndim <= 1


def _unbroadcast(g, t):
    if t.data.shape == g.shape:
        return g
    return np.asarray(g.sum()).reshape(t.data.shape)


def _check_broadcast(a, b, op):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible "
                         "(only scalar broadcasting is supported)")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def sub(a, b):
    return add(a, neg(as_tensor(b)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sigmoid(a):
    s = kernels.sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a):
    if np.any(a.data <= 0):
        raise ValueError("log: domain error, input has non-positive entries")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; the gradient is zero where clamping was active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None):
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, g.reshape(-1)[0]),))
    out = a.data.sum(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a):
    return mul(tsum(a), 1.0 / a.size)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def slice_cols(a, start, stop):
    def bw(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop], (a,), bw)


def stack(tensors, axis=1):
    """Stack equal-shape tensors along a new axis."""
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return _make(out, tuple(tensors), bw)


def take_rows(table, ids):
    """Embedding lookup: rows ``table[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), bw)


def gather(a, ids):
    """Pick ``a[b, ids[b]]`` for every row b."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros(a.shape)
        full[rows, ids] = g
        return (full,)

    return _make(a.data[rows, ids], (a,), bw)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x, w, b):
    """``x @ w + b`` with the bias row added to every row of the product."""
    if x.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes x{x.shape}, w{w.shape}, b{b.shape}")
    return _make(x.data @ w.data + b.data, (x, w, b),
                 lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def softmax(x):
    """Softmax over the last axis of a vector or of each matrix row."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw)


def log_softmax(x):
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax expects a matrix, got shape {x.shape}")
    out = kernels.log_softmax_forward(x.data)
    return _make(out, (x,), lambda g: (kernels.log_softmax_backward(np.ascontiguousarray(g), out),))


def lstm_pointwise(gates, c):
    """Fused gate nonlinearities; returns ``(h, c_new)``.

    The two outputs share one tape node whose data is ``[h | c_new]``; the
    returned tensors are column slices of it.
    """
    H = c.shape[1]
    if gates.shape != (c.shape[0], 4 * H):
        raise ShapeError(f"lstm: gates {gates.shape} do not match cell state {c.shape}")
    h, c_new, cache = kernels.lstm_forward(gates.data, c.data)

    def bw(g):
        g = np.ascontiguousarray(g)
        return kernels.lstm_backward(np.ascontiguousarray(g[:, :H]),
                                     np.ascontiguousarray(g[:, H:]), c.data, cache)

    both = _make(np.concatenate([h, c_new], axis=1), (gates, c), bw)
    return slice_cols(both, 0, H), slice_cols(both, H, 2 * H)


def lstm_cell(x, h, c, w_x, w_h, b):
    """One LSTM step. Gate blocks are ordered input, forget, output, candidate."""
    gates = add(affine(x, w_x, b), matmul(h, w_h))
    return lstm_pointwise(gates, c)


# ---------------------------------------------------------------- backward

def _tape(loss):
    seen = set()
    nodes = []
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack_.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not on the tape (no input requires grad)")
    grads = {id(loss): np.ones(loss.shape)}
    for node in _tape(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
