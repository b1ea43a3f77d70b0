"""Minimal reverse-mode differentiation over array operations.

Only the primitives used by the solver, the residual estimator and the
ST-FNO forward pass are supported. Every primitive works on plain numpy
arrays as well as on :class:`Var`, so the same operator code serves the
fast numerical path and the differentiable path.

Complex values follow the convention that the adjoint of a real loss ``L``
with respect to ``z = a + ib`` is stored as ``dL/da + i dL/db``. Under this
convention a linear map ``y = A x`` back-propagates ``g_x = A^H g_y``.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_local = threading.local()


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in creation order, which is a topological order of the
    computation; :meth:`backward` visits them in reverse exactly once.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self._prev: Tape | None = None
        self.closed = False

    def __enter__(self) -> "Tape":
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        self._prev = None
        # nodes point back at the tape; dropping the list breaks the cycle so
        # intermediates are freed at once instead of by the cyclic collector
        self.nodes = []
        self.closed = True

    def var(self, value, name: str | None = None) -> "Var":
        """Register a leaf variable on this tape."""
        v = Var(np.asarray(value), name=name, _tape=self)
        return v

    def backward(self, loss: "Var") -> dict[int, np.ndarray]:
        if not isinstance(loss, Var) or loss._tape is not self:
            raise ValueError("loss must be a Var recorded on this tape")
        if self.closed:
            raise RuntimeError("backward on a tape whose context has exited")
        if np.iscomplexobj(loss.value) or loss.value.size != 1:
            raise ValueError("loss must be a real scalar")
        grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss._id + 1]):
            g = grads.pop(node._id, None)
            if node._backward is None:
                if g is not None:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                pg = _fit(pg, parent.value)
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg
        return grads


def current_tape() -> Tape | None:
    return getattr(_local, "tape", None)


class Var:
    """A value recorded on a tape, with an adjoint filled by backward."""

    __array_priority__ = 1000

    def __init__(self, value, parents=(), backward=None, name=None, _tape=None):
        tape = _tape if _tape is not None else current_tape()
        if tape is None:
            raise RuntimeError("Var created outside of an active Tape")
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = parents
        self._backward = backward
        self._tape = tape
        self._id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype}, id={self._id})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    @property
    def real(self):
        return real(self)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def is_var(x) -> bool:
    return isinstance(x, Var)


def _fit(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reduce a broadcast adjoint to the shape and field of ``like``."""
    g = np.asarray(g)
    if g.shape != like.shape:
        extra = g.ndim - like.ndim
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, like.shape)) if b == 1 and a != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if not np.iscomplexobj(like) and np.iscomplexobj(g):
        g = g.real
    return g


def _node(value, parents, backward):
    return Var(value, tuple(parents), backward)


def _any_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


# ----------------------------------------------------------------- primitives


def add(a, b):
    if not _any_var(a, b):
        return a + b
    return _node(value_of(a) + value_of(b), (a, b), lambda g: (g, g))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    if not _any_var(a, b):
        return a * b
    av, bv = value_of(a), value_of(b)
    return _node(av * bv, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def power(a, p: float):
    """Real power of a positive real variable."""
    if not isinstance(a, Var):
        return np.power(a, p)
    av = a.value
    return _node(np.power(av, p), (a,), lambda g: (g * p * np.power(av, p - 1.0),))


def real(a):
    if not isinstance(a, Var):
        return np.real(a)
    return _node(np.real(a.value), (a,), lambda g: (g.astype(np.complex128),))


def abs2(a):
    """Squared modulus ``|a|^2`` (real)."""
    if not isinstance(a, Var):
        return (a * np.conj(a)).real
    av = a.value
    return _node((av * np.conj(av)).real, (a,), lambda g: (2.0 * g * av,))


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = value_of(a).size if axis is None else np.prod([value_of(a).shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def fftn(a, axes: Sequence[int]):
    if not isinstance(a, Var):
        return np.fft.fftn(a, axes=axes)
    n = int(np.prod([a.value.shape[i] for i in axes]))
    return _node(np.fft.fftn(a.value, axes=axes), (a,), lambda g: (np.fft.ifftn(g, axes=axes) * n,))


def ifftn(a, axes: Sequence[int]):
    if not isinstance(a, Var):
        return np.fft.ifftn(a, axes=axes)
    n = int(np.prod([a.value.shape[i] for i in axes]))
    return _node(np.fft.ifftn(a.value, axes=axes), (a,), lambda g: (np.fft.fftn(g, axes=axes) / n,))


def fft2(a):
    return fftn(a, axes=(-2, -1))


def ifft2(a):
    return ifftn(a, axes=(-2, -1))


def gelu(a):
    """Exact (erf-based) GELU."""
    av = value_of(a)
    cdf = 0.5 * (1.0 + erf(av / np.sqrt(2.0)))
    out = av * cdf
    if not isinstance(a, Var):
        return out
    pdf = np.exp(-0.5 * av * av) / np.sqrt(2.0 * np.pi)
    return _node(out, (a,), lambda g: (g * (cdf + av * pdf),))


def getitem(a, idx):
    if not isinstance(a, Var):
        return a[idx]
    shape, dtype = a.value.shape, a.value.dtype

    basic = _is_basic(idx)

    def bw(g):
        out = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), bw)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def scatter(a, shape, idx):
    """Place ``a`` at ``idx`` inside a zero array of ``shape``."""
    av = value_of(a)
    out = np.zeros(shape, dtype=av.dtype)
    out[idx] = av
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g[idx],))


def take(a, indices, axis: int):
    if not isinstance(a, Var):
        return np.take(a, indices, axis=axis)
    shape = a.value.shape
    ax = axis % a.value.ndim

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        sl = [slice(None)] * len(shape)
        sl[ax] = indices
        np.add.at(out, tuple(sl), g)
        return (out,)

    return _node(np.take(a.value, indices, axis=axis), (a,), bw)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.value.shape
    return _node(np.reshape(a.value, shape), (a,), lambda g: (np.reshape(g, old),))


def moveaxis(a, src, dst):
    if not isinstance(a, Var):
        return np.moveaxis(a, src, dst)
    return _node(np.moveaxis(a.value, src, dst), (a,), lambda g: (np.moveaxis(g, dst, src),))


def stack(xs: Sequence, axis: int = 0):
    if not _any_var(*xs):
        return np.stack(xs, axis=axis)
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _node(out, tuple(xs), bw)


def concatenate(xs: Sequence, axis: int = 0):
    if not _any_var(*xs):
        return np.concatenate(xs, axis=axis)
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def bw(g):
        ax = axis % g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            res.append(g[tuple(sl)])
        return tuple(res)

    return _node(out, tuple(xs), bw)


def einsum(subscripts: str, a, b):
    """Two-operand einsum; every index of an operand must occur in the other operand or the output."""
    if not _any_var(a, b):
        return np.einsum(subscripts, a, b, optimize=True)
    ins, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    av, bv = value_of(a), value_of(b)
    out = np.einsum(subscripts, av, bv, optimize=True)

    def bw(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, np.conj(bv), optimize=True) if isinstance(a, Var) else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, np.conj(av), optimize=True) if isinstance(b, Var) else None
        return ga, gb

    return _node(out, (a, b), bw)


def where_finite(x) -> bool:
    return bool(np.all(np.isfinite(value_of(x))))


# ------------------------------------------------------------------ checking


def backward(loss: Var) -> dict[int, np.ndarray]:
    """Run the reverse sweep for ``loss`` and populate leaf ``.grad`` fields."""
    return loss._tape.backward(loss)


def value_and_grad(fn: Callable, params: Sequence[np.ndarray]):
    """Evaluate ``fn(*vars)`` on a fresh tape and return the loss and gradients."""
    with Tape() as tape:
        leaves = [tape.var(np.array(p, copy=True)) for p in params]
        loss = fn(*leaves)
        tape.backward(loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]
    return float(loss.value), grads


def grad_check(fn: Callable, params: Sequence[np.ndarray], eps: float = 1e-6,
               n_samples: int = 50, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` receives one argument per entry of ``params`` and returns a real
    scalar; it must work both on arrays and on :class:`Var`. Complex parameters
    are perturbed along their real and imaginary parts separately. The relative
    error of a coordinate is ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``
    with ``floor`` a tiny fraction of the largest sampled gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = [np.asarray(p) for p in params]
    _, grads = value_and_grad(fn, params)
    rng = np.random.default_rng(seed)

    coords = []
    for pi, p in enumerate(params):
        parts = (0, 1) if np.iscomplexobj(p) else (0,)
        for flat in range(p.size):
            for part in parts:
                coords.append((pi, flat, part))
    if len(coords) > n_samples:
        pick = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    tape_vals, fd_vals = [], []
    for pi, flat, part in coords:
        step = eps if part == 0 else 1j * eps
        plus = [q.copy() for q in params]
        minus = [q.copy() for q in params]
        plus[pi].flat[flat] += step
        minus[pi].flat[flat] -= step
        fd = (float(value_of(fn(*plus))) - float(value_of(fn(*minus)))) / (2.0 * eps)
        g = grads[pi].flat[flat]
        tape_vals.append(g.real if part == 0 else np.imag(g))
        fd_vals.append(fd)

    tape_vals, fd_vals = np.array(tape_vals), np.array(fd_vals)
    floor = 1e-8 * max(np.max(np.abs(tape_vals)), np.max(np.abs(fd_vals)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(tape_vals), np.abs(fd_vals)), floor)
    return float(np.max(np.abs(tape_vals - fd_vals) / denom))
