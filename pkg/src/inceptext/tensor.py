"""Minimal dense tensor with a define-by-run graph and reverse-mode differentiation.

Only the operators the detector needs live here; the layer primitives
(convolutions, pooling, losses) are in :mod:`inceptext.ops` and register
themselves through :func:`make_node`.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

_node_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, target building)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One operation record: inputs, output, and the vector-Jacobian product."""

    __slots__ = ("id", "op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: Sequence["Tensor"], vjp: Callable):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.output: Optional[Tensor] = None
        self.vjp = vjp

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.op})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d arrays to 1-d
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return elementwise("add", self, _as_tensor(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise("mul", self, other)
        return elementwise("scale", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return elementwise("scale", self, -1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, self))


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype))


def make_node(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result; record a graph node when any input needs a gradient.

    ``vjp(grad_out)`` must return one array (or None) per input.
    """
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        node = Node(op, inputs, vjp)
        node.output = out
        out.node = node
        out.requires_grad = True
    return out


class Graph:
    """Nodes reachable from a root, in topological (insertion) order."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        seen: dict[int, Node] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            n = t.node
            if n is None or n.id in seen:
                continue
            seen[n.id] = n
            stack.extend(n.inputs)
        return cls([seen[k] for k in sorted(seen)])

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every requires_grad tensor reachable from root."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("root does not require grad")
    graph = Graph.from_root(root)
    pending: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=root.dtype)}
    holders: dict[int, Tensor] = {id(root): root}

    def push(t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in pending:
            pending[key] = pending[key] + g
        else:
            pending[key] = g
            holders[key] = t

    for node in reversed(graph.nodes):
        out = node.output
        g = pending.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        _store(out, g)
        grads = node.vjp(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            push(t, gi.astype(t.dtype, copy=False))
    # leaves
    for key, g in pending.items():
        _store(holders[key], g)


def _store(t: Tensor, g: np.ndarray) -> None:
    t.grad = g.copy() if t.grad is None else t.grad + g


# ----------------------------------------------------------------------------
# elementwise and shape ops


def elementwise(op_kind: str, a: Tensor, b=None) -> Tensor:
    """add / mul / relu / scale. Binary kinds need equal shapes; scale takes a python scalar."""
    if op_kind in ("add", "mul"):
        if not isinstance(b, Tensor):
            raise TypeError(f"{op_kind} needs two tensors")
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch in {op_kind}: {a.shape} vs {b.shape}")
        if op_kind == "add":
            return make_node("add", a.data + b.data, (a, b), lambda g: (g, g))
        ad, bd = a.data, b.data
        return make_node("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))
    if op_kind == "relu":
        if b is not None:
            raise ValueError("relu is unary")
        pos = a.data > 0
        return make_node("relu", np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))
    if op_kind == "scale":
        s = float(b)
        return make_node("scale", a.data * a.dtype.type(s), (a,), lambda g: (g * s,))
    raise ValueError(f"unknown elementwise kind {op_kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def relu(a: Tensor) -> Tensor:
    return elementwise("relu", a)


def scale(a: Tensor, s: float) -> Tensor:
    return elementwise("scale", a, s)


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_node("sum", np.asarray(a.data.sum(axis=axis)), (a,), vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_node("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                     lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_node("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def take(a: Tensor, index) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate in the gradient."""
    idx = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_node("take", a.data[idx], (a,), vjp)


# ----------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_gradient(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-3) -> Tensor:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, evaluated in float64."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = x.data.astype(np.float64)
    flat = base.reshape(-1)
    out = np.empty(flat.size, dtype=np.float64)

    def evaluate(arr):
        with no_grad():
            v = f(Tensor(arr.reshape(base.shape), dtype=np.float64))
        v = v.item() if isinstance(v, Tensor) else float(v)
        if not np.isfinite(v):
            raise FloatingPointError("non-finite function value in finite differences")
        return v

    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = evaluate(flat)
        flat[i] = keep - h
        fm = evaluate(flat)
        flat[i] = keep
        out[i] = (fp - fm) / (2 * h)
    return Tensor(out.reshape(base.shape), dtype=np.float64)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|_inf, |n|_inf, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / denom)


def gradient_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-3,
                   wrt: Optional[Sequence[int]] = None) -> float:
    """Compare autodiff against central differences for a scalar function of arrays.

    Everything runs in float64. Returns the worst relative error across the
    checked inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = f(*tensors)
    backward(out)
    worst = 0.0
    for i in wrt:
        def fi(t, i=i):
            args = [Tensor(a, dtype=np.float64) for a in arrays]
            args[i] = t
            return f(*args)

        num = finite_difference_gradient(fi, Tensor(arrays[i], dtype=np.float64), h)
        ana = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(ana, num.data))
    return worst
