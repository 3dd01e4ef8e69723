"""A small reverse-mode differentiation engine over dense float64 arrays.

Operations record themselves on the active :class:`Tape` when at least one
operand requires a gradient. The tape is append-only, so it is already in
topological order; :func:`backward` walks it once in reverse.

Leaf tensors (``requires_grad=True`` and not produced by an op) accumulate
into ``.grad`` across backward calls until :func:`zero_grad` is called.

Broadcasting follows numpy's trailing-dimension rules; the backward pass
sums gradients over broadcast axes.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Tape", "Tensor", "tensor", "parameter", "backward", "zero_grad", "grad_check",
    "add", "sub", "mul", "div", "neg", "matmul", "tanh", "sigmoid", "exp", "log",
    "pow", "sqrt", "abs", "relu", "maximum", "minimum", "clip", "sum", "mean",
    "concat", "stack", "reshape", "transpose", "slice_", "where_const",
]

_builtin_abs = abs


class Node:
    __slots__ = ("op", "out", "parents", "vjp", "index")

    def __init__(self, op: str, out: "Tensor", parents: tuple["Tensor", ...], vjp: Callable, index: int):
        self.op = op
        self.out = out
        self.parents = parents
        self.vjp = vjp
        self.index = index


class Tape:
    """Append-only record of operations.

    Use as a context manager to make it the active tape::

        with Tape() as tape:
            loss = f(params)
        backward(loss)
    """

    _local = threading.local()   # each thread has its own stack of active tapes

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.backward_visits = 0

    def __enter__(self) -> "Tape":
        Tape._stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def active(cls) -> "Tape | None":
        stack = cls._stack()
        return stack[-1] if stack else None

    @classmethod
    def _stack(cls) -> list["Tape"]:
        try:
            return cls._local.stack
        except AttributeError:
            cls._local.stack = []
            return cls._local.stack


@contextlib.contextmanager
def no_tape():
    """Evaluate without recording, even inside an active tape."""
    stack = Tape._stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "tape", "name", "__weakref__")

    # Make numpy defer to our reflected operators.
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, o): return pow(self, o)
    def __getitem__(self, idx): return slice_(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(op, f"output shape {data.shape}")


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Wrap an op result, recording a node when any parent needs a gradient."""
    _check_finite(op, data)
    out = Tensor(data)
    tape = Tape.active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape = tape
        out.node = Node(op, out, parents, vjp, len(tape.nodes))
        tape.nodes.append(out.node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise binary ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NonFiniteError("div", "division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("maximum", a, b)
    mask = a.data >= b.data
    out = np.where(mask, a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make("maximum", out, (a, b),
                 lambda g: (_unbroadcast(g * mask, sa), _unbroadcast(g * ~mask, sb)))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("minimum", a, b)
    mask = a.data <= b.data
    out = np.where(mask, a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make("minimum", out, (a, b),
                 lambda g: (_unbroadcast(g * mask, sa), _unbroadcast(g * ~mask, sb)))


def pow(a, b) -> Tensor:
    """``a ** b``. A tensor exponent requires a strictly positive base."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor) or not b.requires_grad:
        p = b.data if isinstance(b, Tensor) else np.float64(b)
        ad = a.data
        out = ad ** p
        return _make("pow", out, (a,), lambda g: (_unbroadcast(g * p * ad ** (p - 1), ad.shape),))
    _broadcast_shape("pow", a, b)
    if np.any(a.data <= 0):
        raise NonFiniteError("pow", "tensor exponent with non-positive base")
    ad, bd = a.data, b.data
    out = ad ** bd
    return _make("pow", out, (a, b),
                 lambda g: (_unbroadcast(g * bd * ad ** (bd - 1), ad.shape),
                            _unbroadcast(g * out * np.log(ad), bd.shape)))


# ---------------------------------------------------------------------------
# Elementwise unary ops
# ---------------------------------------------------------------------------


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):   # overflow is reported by _make
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log", "non-positive argument")
    ad = a.data
    return _make("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt", "negative argument")
    out = np.sqrt(a.data)

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make("sqrt", out, (a,), vjp)


def abs(a) -> Tensor:
    """Absolute value; the gradient at 0 is taken as 0."""
    a = _as_tensor(a)
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; no gradient flows where the clamp is active."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def where_const(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; the mask itself is a constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make("where", out, (a, b),
                 lambda g: (_unbroadcast(g * mask, sa), _unbroadcast(g * ~mask, sb)))


# ---------------------------------------------------------------------------
# Reductions and linear algebra
# ---------------------------------------------------------------------------


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), vjp)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make("mean", np.asarray(out), (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics for 1-D and batched operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", a.shape, b.shape)
    k_a = a.shape[-1]
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if k_a != k_b:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        A = ad[None, :] if ad.ndim == 1 else ad
        B = bd[:, None] if bd.ndim == 1 else bd
        G = g
        if ad.ndim == 1:
            G = np.expand_dims(G, -2)
        if bd.ndim == 1:
            G = np.expand_dims(G, -1)
        ga = G @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ G
        ga = _unbroadcast(ga, A.shape).reshape(ad.shape)
        gb = _unbroadcast(gb, B.shape).reshape(bd.shape)
        return ga, gb

    return _make("matmul", out, (a, b), vjp)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes).copy(), (a,),
                 lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def slice_(a, idx) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    fancy = _has_array_index(idx)
    return _make("slice", np.array(a.data[idx]), (a,), lambda g: (_SliceGrad(shape, idx, g, fancy),))


class _SliceGrad:
    """Gradient of a slice: scattered into the parent's buffer lazily, so a
    long chain of small slices of one big tensor stays cheap."""

    __slots__ = ("shape", "idx", "g", "fancy")

    def __init__(self, shape, idx, g, fancy):
        self.shape, self.idx, self.g, self.fancy = shape, idx, g, fancy

    def add_into(self, buf: np.ndarray) -> np.ndarray:
        if self.fancy:
            np.add.at(buf, self.idx, self.g)
        else:
            buf[self.idx] += self.g
        return buf

    def dense(self) -> np.ndarray:
        return self.add_into(np.zeros(self.shape))


def _has_array_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concat", out, tuple(ts), vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in ts]) from None
    n = len(ts)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make("stack", out, tuple(ts), vjp)


def custom(op: str, data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Record an externally computed op (used by the fused kernels)."""
    return _make(op, data, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Repeated calls accumulate; call :func:`zero_grad` to reset. Leaves listed
    in ``params`` that the loss does not reach get an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    try:
        _backward(loss)
    finally:
        for p in params or ():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def _backward(loss: Tensor) -> None:
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return
    tape = loss.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()   # buffers allocated here, safe to update in place
    nodes = tape.nodes
    for i in range(loss.node.index, -1, -1):
        node = nodes[i]
        key = id(node.out)
        g = grads.pop(key, None)
        if g is None:
            continue
        owned.discard(key)
        tape.backward_visits += 1
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if not p.requires_grad or pg is None:
                continue
            if p.node is None:
                if isinstance(pg, _SliceGrad):
                    p.grad = pg.dense() if p.grad is None else pg.add_into(p.grad.copy())
                else:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
                continue
            pkey = id(p)
            prev = grads.get(pkey)
            if isinstance(pg, _SliceGrad):
                if prev is None:
                    grads[pkey] = pg.dense()
                    owned.add(pkey)
                elif pkey in owned:
                    pg.add_into(prev)
                else:
                    grads[pkey] = pg.add_into(prev.copy())
                    owned.add(pkey)
            elif prev is None:
                grads[pkey] = pg
            elif pkey in owned:
                prev += pg
            else:
                grads[pkey] = prev + pg
                owned.add(pkey)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, int] | None
    n_checked: int
    passed: bool | None = None

    def ok(self, tol: float) -> bool:
        return self.max_rel_error < tol


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    point: Sequence[np.ndarray] | np.ndarray,
    h: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` receives a list of leaf tensors built from ``point`` and must return
    a scalar. The relative error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``; the report names the worst
    ``(argument, flat index)`` pair. With ``max_coords`` only that many
    coordinates, drawn uniformly with ``seed``, are perturbed.
    """
    if not 0 < h < 1e-2:
        raise ValueError(f"h must lie in (0, 1e-2), got {h}")
    single = isinstance(point, np.ndarray)
    arrays = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]

    leaves = [parameter(a) for a in arrays]
    with Tape():
        out = f(leaves)
        backward(out)
    analytic = [l.grad if l.grad is not None else np.zeros_like(l.data) for l in leaves]

    def value(arrs):
        with no_tape():
            return float(f([Tensor(a) for a in arrs]).data)

    coords = [(ai, j) for ai, arr in enumerate(arrays) for j in range(arr.size)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.sort(np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False))
        coords = [coords[k] for k in pick]

    worst, where, count = 0.0, None, 0
    for ai, j in coords:
        flat = arrays[ai].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = value(arrays)
        flat[j] = orig - h
        fm = value(arrays)
        flat[j] = orig
        numeric = (fp - fm) / (2.0 * h)
        an = analytic[ai].reshape(-1)[j]
        err = _builtin_abs(an - numeric) / max(1.0, _builtin_abs(an))
        count += 1
        if where is None or err > worst:
            worst, where = err, (ai, j)
    return GradCheckReport(worst, where, count, None if tol is None else worst < tol)
