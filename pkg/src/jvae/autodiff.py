"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` records every operation applied to tensors that belong to
it, in creation order, so node inputs always precede the node. Calling
:meth:`Graph.backward` on a scalar walks that list in reverse and
accumulates vector-Jacobian products.

Tensors that do not belong to a graph (constants, detached values, model
parameters used at inference time) flow through the same operations without
recording anything.

    >>> g = Graph()
    >>> w = g.variable([1.0, 2.0, 3.0])
    >>> loss = square(w).sum()
    >>> g.backward(loss)[w.node_id].data
    array([2., 4., 6.])
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "GraphError",
    "Tensor",
    "Graph",
    "as_tensor",
    "detach",
    "add",
    "sub",
    "neg",
    "mul",
    "matmul",
    "concat",
    "getitem",
    "reshape",
    "sum",
    "mean",
    "exp",
    "expm1",
    "log",
    "tanh",
    "sigmoid",
    "square",
    "softmax",
    "log_softmax",
    "clip",
]

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class GraphError(RuntimeError):
    pass


class Tensor:
    """An immutable float64 array, optionally bound to a node of a graph."""

    __slots__ = ("data", "graph", "node_id")
    __array_priority__ = 100.0

    def __init__(self, data, graph: Optional["Graph"] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.node_id = node_id

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
    def tracked(self) -> bool:
        return self.node_id is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Graph:
    """A define-by-run computation graph.

    Each node stores its operation tag, the node ids of its inputs and a
    closure mapping the output gradient to one gradient per input. Gradients
    live in per-node slots filled by :meth:`backward`.
    """

    def __init__(self):
        self._tags: list[str] = []
        self._parents: list[tuple] = []
        self._vjps: list[Optional[VJP]] = []
        self._shapes: list[tuple] = []
        self._grads: Optional[list] = None

    def __len__(self):
        return len(self._tags)

    @property
    def tags(self) -> list[str]:
        return list(self._tags)

    def variable(self, value) -> Tensor:
        """Register ``value`` as a leaf node and return it as a tensor."""
        data = np.array(value, dtype=np.float64)
        return self._add_node("leaf", data, (), None)

    def _add_node(self, tag: str, data: np.ndarray, parents: tuple, vjp: Optional[VJP]) -> Tensor:
        if self._grads is not None:
            raise GraphError("cannot extend a graph after backward(); call reset() first")
        node_id = len(self._tags)
        self._tags.append(tag)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(data.shape)
        return Tensor(data, self, node_id)

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Accumulate d(loss)/d(node) for every node and return the gradient map.

        Nodes that ``loss`` does not depend on get zero gradients.
        """
        if loss.graph is not self or loss.node_id is None:
            raise GraphError("loss does not belong to this graph")
        if loss.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._grads is not None:
            raise GraphError("backward() already ran on this graph; call reset() first")

        grads: list = [None] * len(self._tags)
        grads[loss.node_id] = np.ones(loss.shape)
        for i in range(loss.node_id, -1, -1):
            g = grads[i]
            vjp = self._vjps[i]
            if g is None or vjp is None:
                continue
            for pid, pg in zip(self._parents[i], vjp(g)):
                if pid is None or pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        for i, g in enumerate(grads):
            if g is None:
                grads[i] = np.zeros(self._shapes[i])
        self._grads = grads
        return {i: Tensor(g) for i, g in enumerate(grads)}

    def grad(self, t: Tensor) -> np.ndarray:
        if self._grads is None:
            raise GraphError("backward() has not run")
        if t.graph is not self:
            raise GraphError("tensor does not belong to this graph")
        return self._grads[t.node_id]

    def reset(self) -> None:
        """Clear gradient slots so backward() may run again."""
        self._grads = None

    def record(self, tag: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
        """Hook for fused operations defined outside this module.

        ``vjp`` receives the output gradient and must return one array (or
        None) per entry of ``inputs``.
        """
        return _record(tag, value, inputs, vjp)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t) -> Tensor:
    return Tensor(as_tensor(t).data)


def _record(tag: str, value: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    graph = None
    for t in inputs:
        if t.graph is not None and t.node_id is not None:
            if graph is None:
                graph = t.graph
            elif t.graph is not graph:
                raise GraphError(f"{tag}: operands belong to different graphs")
    if graph is None:
        return Tensor(value)
    parents = tuple(t.node_id if t.graph is graph else None for t in inputs)
    return graph._add_node(tag, value, parents, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", out, (a, b), vjp)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    """Concatenate along the last axis (or ``axis``)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat needs at least one operand")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError("concat", ts[0].shape, t.shape)
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _record("concat", out, ts, lambda g: np.split(g, bounds, axis=ax))


def _is_advanced(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (np.ndarray, list)) for k in parts)


def getitem(a, key) -> Tensor:
    """Indexing and slicing; advanced (array) indices scatter-add on the way back."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice[{exc}]", a.shape) from None
    shape = a.shape
    advanced = _is_advanced(key)

    def vjp(g):
        ga = np.zeros(shape)
        if advanced:
            np.add.at(ga, key, g)
        else:
            ga[key] = g
        return (ga,)

    return _record("slice", np.array(out, dtype=np.float64), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    orig = a.shape
    return _record("reshape", out, (a,), lambda g: (g.reshape(orig),))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def expm1(a) -> Tensor:
    """``exp(a) - 1`` without cancellation near zero."""
    a = as_tensor(a)
    out = np.expm1(a.data)
    return _record("expm1", out, (a,), lambda g: (g * (out + 1.0),))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record("log", np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax", out, (a,), vjp)


def log_softmax(a) -> Tensor:
    """Numerically stable log of :func:`softmax`."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _record("clip", np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))
