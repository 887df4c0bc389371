"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects
in creation order; reversing that order is a valid topological order for the
backward sweep. A tape is single-use: after :meth:`Tape.backward` it refuses
new operations.

The op functions in this module also accept plain arrays. With no ``Var``
among the inputs they simply return the numpy result, which lets model code
run unchanged with or without gradient recording.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError


class Var:
    __slots__ = ("value", "tape", "backward_fn", "parents", "name")
    __array_priority__ = 1000

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Records operations on parameters registered with :meth:`param`."""

    def __init__(self):
        self._nodes: list[Var] = []
        self._params: dict[str, Var] = {}
        self._consumed = False

    def _check(self):
        if self._consumed:
            raise UsageError("tape was already consumed by backward(); record a new one")

    def param(self, name: str, value) -> Var:
        self._check()
        if name in self._params:
            raise UsageError(f"parameter {name!r} registered twice")
        v = Var(np.asarray(value, dtype=np.float64), self, name=name)
        self._params[name] = v
        return v

    def record(self, value, parents, backward_fn) -> Var:
        self._check()
        v = Var(value, self, parents, backward_fn)
        self._nodes.append(v)
        return v

    @property
    def params(self) -> dict[str, Var]:
        return dict(self._params)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every registered parameter.

        Parameters the loss does not depend on get an all-zero gradient.
        """
        self._check()
        if not isinstance(loss, Var) or loss.tape is not self:
            raise UsageError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise UsageError("backward() needs a scalar loss")
        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True
        out = {}
        for name, p in self._params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.value) if g is None else np.broadcast_to(g, p.value.shape).copy()
        return out


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, out, grad_fn):
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape.record(out, (a, b), grad_fn)


def add(a, b):
    av, bv = value(a), value(b)
    return _binary(a, b, av + bv, lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    return _binary(a, b, av - bv, lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    return _binary(
        a, b, av * bv, lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _binary(
        a, b, out,
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv

    def grad(g):
        if bv.ndim == 1:
            ga = g[..., None] * bv
            gb = np.swapaxes(av, -1, -2) @ g[..., None]
            return _unbroadcast(ga, av.shape), _unbroadcast(gb[..., 0], bv.shape)
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _binary(a, b, out, grad)


def _unary(x, out, grad_fn):
    if not isinstance(x, Var):
        return out
    return x.tape.record(out, (x,), lambda g: (grad_fn(g),))


def relu(x):
    xv = value(x)
    return _unary(x, np.maximum(xv, 0.0), lambda g: g * (xv > 0))


def sigmoid(x):
    xv = value(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def softplus(x):
    xv = value(x)
    return _unary(x, np.logaddexp(0.0, xv), lambda g: g * 0.5 * (1.0 + np.tanh(0.5 * xv)))


def exp(x):
    out = np.exp(value(x))
    return _unary(x, out, lambda g: g * out)


def log(x):
    xv = value(x)
    return _unary(x, np.log(xv), lambda g: g / xv)


def sqrt(x):
    """Square root whose derivative at 0 is taken as 0."""
    xv = value(x)
    out = np.sqrt(xv)
    safe = np.where(out > 0, out, 1.0)
    return _unary(x, out, lambda g: np.where(out > 0, 0.5 * g / safe, 0.0))


def square(x):
    return mul(x, x)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return _unary(x, out, grad)


def mean(x, axis=None, keepdims=False):
    xv = value(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    xv = value(x)
    return _unary(x, xv.reshape(shape), lambda g: g.reshape(xv.shape))


def transpose(x, axes):
    xv = value(x)
    inv = np.argsort(axes)
    return _unary(x, np.transpose(xv, axes), lambda g: np.transpose(g, inv))


def getitem(x, idx):
    """Indexing, including integer-array gathers (gradient scatter-adds)."""
    xv = value(x)

    def grad(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return out

    return _unary(x, xv[idx], grad)


def where(cond, a, b):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    return _binary(
        a, b, out,
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), av.shape),
                   _unbroadcast(np.where(cond, 0.0, g), bv.shape)),
    )


def softmax(x, axis=-1):
    xv = value(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _unary(x, out, lambda g: out * (g - np.sum(g * out, axis=axis, keepdims=True)))
