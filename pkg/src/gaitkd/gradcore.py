"""Minimal reverse-mode differentiation over dense float64 numpy arrays.

A :class:`Tape` records every primitive applied to its variables in
execution order; :meth:`Tape.backward` walks that record in reverse and
accumulates adjoints into each node's ``grad``.  Plain numpy arrays and
Python scalars mixed into an expression are treated as constants.

    >>> tape = Tape()
    >>> x = tape.leaf([1.0, 2.0])
    >>> loss = sum(square(x))
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tape", "Var", "add", "sub", "mul", "div", "neg", "exp", "log", "square",
    "sqrt", "tanh", "relu", "clamp_min", "sum", "mean", "max_reduce",
    "logsumexp", "softmax", "log_softmax", "softmax_lastdim",
    "l2_normalize", "l2_normalize_lastdim", "broadcast", "matmul",
    "moveaxis", "reshape", "take_along", "concat", "where",
    "check_gradient", "check_directional", "GradCheckReport", "value_of",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A value on a tape together with its accumulated gradient."""

    __array_priority__ = 1000

    def __init__(self, tape, value, parents=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return self.vjp is None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var(id={self.id}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of primitive applications.

    One tape per loss evaluation.  A tape is not safe to share between
    threads while it is being built or differentiated.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value, name=None) -> Var:
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in leaf {name or ''}".strip())
        return Var(self, arr, name=name)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def zero_grad(self):
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)

    def backward(self, loss: Var):
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.vjp is None or not node.grad.any():
                continue
            grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if isinstance(parent, Var) and g is not None:
                    parent.grad = parent.grad + g


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands live on different tapes")
    return tape


def _record(value, parents, vjp, name=None):
    tape = _tape_of(*parents)
    if tape is None:
        return value
    return Var(tape, value, parents, vjp, name)


def _binary_shape(a, b):
    try:
        return np.broadcast_shapes(np.shape(a), np.shape(b))
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {np.shape(a)} and {np.shape(b)}") from exc


# -- elementwise -----------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    _binary_shape(av, bv)
    return _record(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    _binary_shape(av, bv)
    return _record(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    _binary_shape(av, bv)
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    _binary_shape(av, bv)
    if np.any(bv == 0):
        raise NumericError("division by zero")
    out = av / bv
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _record(-value_of(a), (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(value_of(a))
    return _record(out, (a,), lambda g: (g * out,))


def log(a):
    av = value_of(a)
    if np.any(av <= 0):
        raise NumericError("log of a non-positive value")
    return _record(np.log(av), (a,), lambda g: (g / av,))


def clamp_min(a, floor):
    """``max(a, floor)``; the adjoint is zero where the floor is active."""
    av = value_of(a)
    keep = av > floor
    return _record(np.where(keep, av, floor), (a,), lambda g: (g * keep,))


def square(a):
    av = value_of(a)
    return _record(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a):
    """Square root with a zero adjoint at exactly zero (no infinite slope)."""
    av = value_of(a)
    if np.any(av < 0):
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(av)
    safe = np.where(out > 0, out, 1.0)
    return _record(out, (a,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),))


def tanh(a):
    out = np.tanh(value_of(a))
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    av = value_of(a)
    on = av > 0
    return _record(np.where(on, av, 0.0), (a,), lambda g: (g * on,))


def where(cond, a, b):
    """Select from ``a`` where the constant mask ``cond`` is true, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0.0), av.shape),
                                            _unbroadcast(np.where(cond, 0.0, g), bv.shape)))


# -- reductions ------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    return _record(np.asarray(out), (a,), lambda g: (_expand(g, av.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    out = np.mean(av, axis=axis, keepdims=keepdims)
    n = av.size // max(np.asarray(out).size, 1)
    return _record(np.asarray(out), (a,), lambda g: (_expand(g, av.shape, axis, keepdims) / n,))


def max_reduce(a, axis=-1, keepdims=False):
    """Max along ``axis``; ties send the adjoint to the first maximiser."""
    av = value_of(a)
    idx = np.expand_dims(np.argmax(av, axis=axis), axis)
    out = np.take_along_axis(av, idx, axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def vjp(g):
        grad = np.zeros_like(av)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, idx, gk, axis)
        return (grad,)

    return _record(out, (a,), vjp)


def logsumexp(a, axis=-1, keepdims=False):
    av = value_of(a)
    top = np.max(av, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    shifted = np.exp(av - top)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out_k = np.log(total) + top
    soft = shifted / total
    out = out_k if keepdims else np.squeeze(out_k, axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * soft,)

    return _record(out, (a,), vjp)


def softmax(a, axis=-1):
    av = value_of(a)
    shifted = np.exp(av - np.max(av, axis=axis, keepdims=True))
    out = shifted / np.sum(shifted, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record(out, (a,), vjp)


def softmax_lastdim(a):
    return softmax(a, axis=-1)


def log_softmax(a, axis=-1):
    av = value_of(a)
    shifted = av - np.max(av, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    prob = np.exp(out)

    def vjp(g):
        return (g - prob * np.sum(g, axis=axis, keepdims=True),)

    return _record(out, (a,), vjp)


def l2_normalize(a, axis=-1, floor=1e-12):
    av = value_of(a)
    norm = np.sqrt(np.sum(av * av, axis=axis, keepdims=True))
    if np.any(norm <= floor):
        bad = np.argwhere(np.squeeze(norm, axis) <= floor)[0]
        raise NumericError(f"cannot normalise a near-zero vector at index {tuple(int(i) for i in bad)}")
    out = av / norm

    def vjp(g):
        return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / norm,)

    return _record(out, (a,), vjp)


def l2_normalize_lastdim(a):
    return l2_normalize(a, axis=-1)


# -- shape ------------------------------------------------------------------

def broadcast(a, shape):
    av = value_of(a)
    try:
        out = np.broadcast_to(av, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {av.shape} to {shape}") from exc
    return _record(out, (a,), lambda g: (_unbroadcast(g, av.shape),))


def reshape(a, shape):
    av = value_of(a)
    return _record(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def moveaxis(a, source, destination):
    av = value_of(a)
    return _record(np.moveaxis(av, source, destination), (a,),
                   lambda g: (np.moveaxis(g, destination, source),))


def _getitem(a, index):
    av = value_of(a)
    out = np.array(av[index])

    def vjp(g):
        grad = np.zeros_like(av)
        np.add.at(grad, index, g)
        return (grad,)

    return _record(out, (a,), vjp)


def take_along(a, indices, axis=-1):
    av = value_of(a)
    indices = np.asarray(indices)
    out = np.take_along_axis(av, indices, axis)

    def vjp(g):
        grad = np.zeros_like(av)
        index = list(np.indices(indices.shape, sparse=True))
        index[axis] = indices
        np.add.at(grad, tuple(index), g)
        return (grad,)

    return _record(out, (a,), vjp)


def concat(items: Sequence, axis=0):
    values = [value_of(x) for x in items]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(items), vjp)


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch {av.shape} @ {bv.shape}") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return (_unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape))

    return _record(out, (a, b), vjp)


# -- finite-difference checking --------------------------------------------

@dataclass
class GradCheckReport:
    max_abs_err: float
    max_rel_err: float
    passed: bool
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray


def analytic_grad(f: Callable[[Var], Var], x) -> tuple[float, np.ndarray]:
    tape = Tape()
    leaf = tape.leaf(x)
    out = f(leaf)
    tape.backward(out)
    return float(out.value), leaf.grad


def numeric_grad(f: Callable[[Var], Var], x, eps=1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        # plain arrays act as constants, so no tape is recorded here
        flat[j] = orig + eps
        fp = float(value_of(f(x.copy())))
        flat[j] = orig - eps
        fm = float(value_of(f(x.copy())))
        flat[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {j}")
        gflat[j] = (fp - fm) / (2.0 * eps)
    return grad


def check_gradient(f: Callable[[Var], Var], x, eps=1e-5, tol=1e-5) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    A coordinate passes when its relative error is within ``tol`` or, for
    gradients smaller than one, its absolute error is.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, an = analytic_grad(f, x)
    fd = numeric_grad(f, x, eps)
    abs_err = np.abs(an - fd)
    scale = np.maximum(np.abs(an), np.abs(fd))
    rel_err = abs_err / np.where(scale > 0, scale, 1.0)
    ok = abs_err <= tol * np.maximum(scale, 1.0)
    worst = np.unravel_index(int(np.argmax(abs_err / np.maximum(scale, 1.0))), np.shape(an)) if an.size else ()
    return GradCheckReport(
        max_abs_err=float(abs_err.max(initial=0.0)),
        max_rel_err=float(rel_err.max(initial=0.0)),
        passed=bool(np.all(ok)),
        worst_index=tuple(int(i) for i in worst),
        analytic=an,
        numeric=fd,
    )



def check_directional(f: Callable[[Var], Var], x, directions=8, eps=1e-6, tol=1e-5, rng=None) -> GradCheckReport:
    """Central differences along random unit directions instead of every coordinate.

    Each direction checks one linear combination of all gradient entries,
    at two function evaluations apiece; ``analytic`` and ``numeric`` hold
    the directional derivatives.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(x, dtype=np.float64)
    _, an = analytic_grad(f, x)
    V = rng.standard_normal((directions,) + x.shape)
    V /= np.linalg.norm(V.reshape(directions, -1), axis=1).reshape((directions,) + (1,) * x.ndim)
    an_d = np.array([np.sum(an * v) for v in V])
    fd_d = np.array([(float(value_of(f(x + eps * v))) - float(value_of(f(x - eps * v)))) / (2 * eps) for v in V])
    abs_err = np.abs(an_d - fd_d)
    scale = np.maximum(np.abs(an_d), np.abs(fd_d))
    worst = int(np.argmax(abs_err / np.maximum(scale, 1.0)))
    return GradCheckReport(
        max_abs_err=float(abs_err.max()),
        max_rel_err=float((abs_err / np.where(scale > 0, scale, 1.0)).max()),
        passed=bool(np.all(abs_err <= tol * np.maximum(scale, 1.0))),
        worst_index=(worst,),
        analytic=an_d,
        numeric=fd_d,
    )
