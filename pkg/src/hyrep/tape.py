"""Reverse-mode differentiation over a fixed set of array primitives.

The tape is define-by-run: applying a primitive to :class:`Var` operands
records a node holding the forward value and a vector-Jacobian closure.
``backward`` walks the recorded graph in reverse topological order and
accumulates gradients into the leaf variables.

Every primitive also accepts plain numpy arrays (or scalars), in which case
it evaluates eagerly with no recording.  This lets geometric formulas be
written once and used both for inference (numpy path) and training (Var
path).

Only scalar outputs may be differentiated; all training objectives here are
scalars.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var",
    "value",
    "backward",
    "grad",
    "check_gradient",
    "tanh",
    "atanh",
    "asinh",
    "arccosh",
    "log",
    "exp",
    "sqrt",
    "relu",
    "vsum",
    "vmean",
    "norm",
    "stack",
    "where",
    "take",
    "matmul",
    "transpose",
    "reshape",
    "softmax",
    "logsumexp",
]

_NORM_FLOOR = 1e-15


class Var:
    """A node in the computation graph wrapping an ndarray value."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    # make ndarray <op> Var dispatch to the reflected Var operator
    __array_ufunc__ = None

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var(shape={self.data.shape})"

    # -- operator sugar -------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def value(x):
    """Forward value of ``x`` as an ndarray, whether Var or plain array."""
    if isinstance(x, Var):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _is_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _node(data, parents, vjp):
    recorded = tuple(p for p in parents if isinstance(p, Var))
    return Var(data, _parents=recorded, _vjp=vjp)


# -- arithmetic ---------------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    if not _is_var(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g, av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(g, bv.shape))
        return gs

    return _node(out, (a, b), vjp)


def sub(a, b):
    return add(a, mul(b, -1.0))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    if not _is_var(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(g * av, bv.shape))
        return gs

    return _node(out, (a, b), vjp)


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    if not _is_var(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(g / bv, av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(-g * av / (bv * bv), bv.shape))
        return gs

    return _node(out, (a, b), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not _is_var(a, b):
        return out
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul primitive supports 2-D operands only")

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(g @ bv.T)
        if isinstance(b, Var):
            gs.append(av.T @ g)
        return gs

    return _node(out, (a, b), vjp)


# -- elementwise nonlinearities ----------------------------------------


def _elementwise(x, fwd, dfdx):
    xv = value(x)
    out = fwd(xv)
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: [g * dfdx(xv, out)])


def tanh(x):
    return _elementwise(x, np.tanh, lambda xv, y: 1.0 - y * y)


def atanh(x):
    return _elementwise(x, np.arctanh, lambda xv, y: 1.0 / (1.0 - xv * xv))


def asinh(x):
    return _elementwise(x, np.arcsinh, lambda xv, y: 1.0 / np.sqrt(1.0 + xv * xv))


def arccosh(x):
    return _elementwise(x, np.arccosh, lambda xv, y: 1.0 / np.sqrt(xv * xv - 1.0))


def log(x):
    return _elementwise(x, np.log, lambda xv, y: 1.0 / xv)


def exp(x):
    return _elementwise(x, np.exp, lambda xv, y: y)


def sqrt(x):
    return _elementwise(x, np.sqrt, lambda xv, y: 0.5 / y)


def relu(x):
    return _elementwise(x, lambda v: np.maximum(v, 0.0), lambda xv, y: (xv > 0.0).astype(np.float64))


# -- reductions and shape ops ------------------------------------------


def vsum(x, axis=None, keepdims=False):
    xv = value(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, xv.shape).copy()]

    return _node(out, (x,), vjp)


def vmean(x, axis=None, keepdims=False):
    xv = value(x)
    n = xv.size if axis is None else xv.shape[axis]
    return div(vsum(x, axis=axis, keepdims=keepdims), float(n))


def norm(x, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; gradient uses a floored denominator."""
    xv = value(x)
    out = np.sqrt((xv * xv).sum(axis=axis, keepdims=keepdims))
    if not isinstance(x, Var):
        return out
    safe = np.maximum(np.sqrt((xv * xv).sum(axis=axis, keepdims=True)), _NORM_FLOOR)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [g * xv / safe]

    return _node(out, (x,), vjp)


def stack(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not _is_var(*xs):
        return out

    def vjp(g):
        parts = np.split(np.asarray(g), len(xs), axis=axis)
        return [np.squeeze(p, axis=axis) for p, x in zip(parts, xs) if isinstance(x, Var)]

    return _node(out, tuple(xs), vjp)


def where(cond, a, b):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    if not _is_var(a, b):
        return out

    def vjp(g):
        gs = []
        if isinstance(a, Var):
            gs.append(_unbroadcast(np.where(cond, g, 0.0), av.shape))
        if isinstance(b, Var):
            gs.append(_unbroadcast(np.where(cond, 0.0, g), bv.shape))
        return gs

    return _node(out, (a, b), vjp)


def take(x, indices, axis=0):
    indices = np.asarray(indices)
    xv = value(x)
    out = np.take(xv, indices, axis=axis)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        acc = np.zeros_like(xv)
        if axis != 0:
            raise ValueError("take gradient implemented for axis=0 only")
        np.add.at(acc, indices, np.asarray(g))
        return [acc]

    return _node(out, (x,), vjp)


def transpose(x, axes=None):
    xv = value(x)
    out = np.transpose(xv, axes)
    if not isinstance(x, Var):
        return out
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return [np.transpose(np.asarray(g), inv)]

    return _node(out, (x,), vjp)


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    if not isinstance(x, Var):
        return out
    return _node(out, (x,), lambda g: [np.asarray(g).reshape(xv.shape)])


# -- composites ---------------------------------------------------------


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtracted; the shift is a constant)."""
    shift = np.max(value(x), axis=axis, keepdims=True)
    e = exp(sub(x, shift))
    return div(e, vsum(e, axis=axis, keepdims=True))


def logsumexp(x, axis=-1):
    shift = np.max(value(x), axis=axis, keepdims=True)
    s = add(log(vsum(exp(sub(x, shift)), axis=axis, keepdims=True)), shift)
    target = tuple(np.squeeze(value(s), axis=axis).shape)
    if isinstance(s, Var):
        return reshape(s, target)
    return np.squeeze(s, axis=axis)


# -- backward pass ------------------------------------------------------


def backward(out):
    """Accumulate d(out)/d(leaf) into ``.grad`` of every reachable Var.

    ``out`` must hold a scalar.  Existing ``.grad`` fields along the graph
    are reset first, so repeated calls do not accumulate across calls.
    """
    if not isinstance(out, Var):
        raise TypeError("backward expects a Var output")
    if value(out).size != 1:
        raise ValueError("backward requires a scalar output")

    # iterative post-order: graphs from long training loops can be deep
    order = []
    seen = set()
    stack_ = [(out, False)]
    while stack_:
        v, expanded = stack_.pop()
        if expanded:
            order.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack_.append((v, True))
        for p in v._parents:
            stack_.append((p, False))

    for v in order:
        v.grad = None
    out.grad = np.ones_like(out.data)
    for v in reversed(order):
        if v._vjp is None or v.grad is None:
            continue
        gs = v._vjp(v.grad)
        for p, g in zip(v._parents, gs):
            if g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g


def grad(out, params):
    """Gradients of scalar ``out`` with respect to each Var in ``params``."""
    backward(out)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def check_gradient(fn, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a list of Var parameters to a scalar Var.  The error for a
    coordinate is |analytic - numeric| / max(1, |numeric|); the maximum over
    all coordinates of all parameters is returned.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    pvars = [Var(np.array(p, dtype=np.float64)) for p in params]
    out = fn(pvars)
    analytic = grad(out, pvars)

    worst = 0.0
    for pi, p in enumerate(params):
        base = np.array(p, dtype=np.float64)
        num = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(value(fn([Var(np.array(q, dtype=np.float64)) if qi != pi else Var(base.copy()) for qi, q in enumerate(params)])))
            flat[i] = orig - h
            fm = float(value(fn([Var(np.array(q, dtype=np.float64)) if qi != pi else Var(base.copy()) for qi, q in enumerate(params)])))
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        err = np.abs(analytic[pi] - num) / np.maximum(1.0, np.abs(num))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
