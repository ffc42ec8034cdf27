"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs participates in differentiation (it is a ``requires_grad`` leaf or was
itself produced on the tape).  Outside a tape, or inside :func:`no_grad`, the
same functions are plain numpy arithmetic.

    >>> w = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     out = (w * w).sum()
    >>> tape.backward(out)
    >>> w.grad
    array([6.])
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError, UsageError

EXP_CLAMP = 30.0

_local = threading.local()


def _active() -> "Tape | None":
    return getattr(_local, "tape", None)


class Tensor:
    """Dense array with optional participation in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._index = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        t._index = -1
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __getitem__ = lambda self, key: getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only record of primitive operations for one computation.

    A tape belongs to the thread that entered it; other threads may run their
    own tapes concurrently.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: list[Tape | None] = []

    def __enter__(self) -> "Tape":
        self._prev.append(_active())
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()

    def _record(self, out: Tensor, inputs: tuple, backward) -> Tensor:
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(inputs, out, backward))
        return out

    def backward(self, output: Tensor) -> None:
        """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf."""
        if not isinstance(output, Tensor) or output._tape is not self:
            raise UsageError("backward: output was not recorded on this tape")
        if output.data.size != 1:
            raise UsageError(f"backward: output must be scalar, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes[: output._index + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None:
                    continue
                if inp._tape is self:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
                elif inp.requires_grad:
                    if gi.shape != inp.data.shape:
                        gi = np.broadcast_to(gi, inp.data.shape)
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi


def backward(output: Tensor) -> None:
    """Run the backward sweep on the tape that produced ``output``."""
    if not isinstance(output, Tensor) or output._tape is None:
        raise UsageError("backward: output is not on any tape")
    output._tape.backward(output)


@contextlib.contextmanager
def no_grad():
    """Suspend recording on this thread."""
    prev = _active()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _emit(arr: np.ndarray, inputs: tuple, backward) -> Tensor:
    out = Tensor._wrap(arr)
    tape = _active()
    if tape is not None:
        for t in inputs:
            if t.requires_grad or t._tape is tape:
                tape._record(out, inputs, backward)
                break
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix/vector products: (m,n)@(n,), (n,)@(n,k), (m,n)@(n,k)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2:
            return np.outer(g, bd), ad.T @ g
        if bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return _emit(ad @ bd, (a, b), bw)


def affine(x, W, b) -> Tensor:
    """``W x + b`` for a vector ``x`` or row-wise for a batch ``x`` of shape (B, n)."""
    x, W, b = _as_tensor(x), _as_tensor(W), _as_tensor(b)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(
            f"affine: x shape {x.shape} does not conform to W shape {W.shape} and b shape {b.shape}"
        )
    xd, Wd = x.data, W.data

    def bw(g):
        if xd.ndim == 1:
            return g @ Wd, np.outer(g, xd), g
        return g @ Wd, g.T @ xd, g.sum(axis=0)

    return _emit(xd @ Wd.T + b.data, (x, W, b), bw)


def elementwise(x, kind: str) -> Tensor:
    """Apply ``tanh``, ``exp``, ``softplus`` or ``square`` elementwise.

    ``exp`` saturates its input at +30; the saturated region has zero gradient.
    """
    x = _as_tensor(x)
    xd = x.data
    if kind == "tanh":
        out = np.tanh(xd)
        return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "exp":
        out = np.exp(np.minimum(xd, EXP_CLAMP))
        return _emit(out, (x,), lambda g: (np.where(xd > EXP_CLAMP, 0.0, g * out),))
    if kind == "softplus":
        out = np.logaddexp(0.0, xd)
        return _emit(out, (x,), lambda g: (g / (1.0 + np.exp(-xd)),))
    if kind == "square":
        return _emit(xd * xd, (x,), lambda g: (2.0 * g * xd,))
    raise ConfigError(f"unknown elementwise kind {kind!r}")


def tanh(x) -> Tensor:
    return elementwise(x, "tanh")


def exp(x) -> Tensor:
    return elementwise(x, "exp")


def softplus(x) -> Tensor:
    return elementwise(x, "softplus")


def square(x) -> Tensor:
    return elementwise(x, "square")


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    out = np.sqrt(x.data)
    return _emit(out, (x,), lambda g: (g / (2.0 * out),))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit(np.asarray(out), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, key) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _emit(np.array(x.data[key]), (x,), bw)


def take(x, idx, axis: int = -1) -> Tensor:
    """Select entries ``idx`` along ``axis`` (a gather)."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _emit(np.take(x.data, idx, axis=axis), (x,), bw)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit(out, parts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None
    return _emit(out, parts, lambda g: tuple(np.moveaxis(g, axis, 0)))


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    ``f`` is called with no arguments and must read ``params`` through closure.
    Parameters are perturbed in place and restored afterwards.
    """
    if h <= 0:
        raise UsageError("gradient_check: step h must be positive")
    params = list(params)
    saved_flags = [p.requires_grad for p in params]
    saved_grads = [p.grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        with Tape() as tape:
            out = f()
        if out._tape is tape:
            tape.backward(out)
        analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    finally:
        for p, flag, g in zip(params, saved_flags, saved_grads):
            p.requires_grad = flag
            p.grad = g

    def probe(p, k, where):
        with no_grad():
            val = float(np.asarray(f().data).reshape(()))
        if not np.isfinite(val):
            label = p.name or f"param[{k}]"
            raise NumericalError(f"gradient_check: non-finite f at {label}{list(where)} ({val})")
        return val

    worst = 0.0
    for k, (p, a) in enumerate(zip(params, analytic)):
        for where in np.ndindex(p.shape):
            orig = p.data[where]
            p.data[where] = orig + h
            fp = probe(p, k, where)
            p.data[where] = orig - h
            fm = probe(p, k, where)
            p.data[where] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(a[where])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-12)
            worst = max(worst, err)
    return worst
