"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every backward rule is expressed in terms of the primitives in this module,
never raw numpy, so calling the engine with create_graph=True yields a
differentiable graph of the gradient itself. That property is what lets the
gradient-penalty term of the critic loss train with exact second-order
gradients instead of a finite-difference stand-in.

Design notes:
- float64 only; this code values checkable gradients over speed
- tensors are immutable from the graph's point of view; optimizers mutate
  .data in place between graph builds, never during one
- backward() accepts scalars only, like any sane loss
"""

from __future__ import annotations

import numpy as np

from ..errors import GraphStateError, ShapeMismatch


class _GradMode:
    enabled = True


class no_grad:
    """Context manager: build no graph inside."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class _enable_grad:
    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = True
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, powc(_wrap(other), -1.0))

    def __rtruediv__(self, other):
        return mul(_wrap(other), powc(self, -1.0))

    def __pow__(self, exponent):
        return powc(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def backward(self, create_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf."""
        table, order = _run_backward(self, create_graph)
        for node in order:
            if node._vjp is None and node.requires_grad:
                g = table.get(id(node))
                if g is None:
                    continue
                node.grad = g if node.grad is None else Tensor(node.grad.data + g.data)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _GradMode.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# engine


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, iter]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order  # inputs first, root last


def _run_backward(root: Tensor, create_graph: bool):
    if root.data.size != 1:
        raise GraphStateError(f"backward target must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphStateError("tensor has no graph; nothing requires grad")
    order = _toposort(root)
    table: dict[int, Tensor] = {id(root): Tensor(np.ones_like(root.data))}
    ctx = _enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            if node._vjp is None:
                continue
            g = table.get(id(node))
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = table.get(id(parent))
                table[id(parent)] = pg if prev is None else add(prev, pg)
    return table, order


def backward(output: Tensor, create_graph: bool = False) -> None:
    output.backward(create_graph=create_graph)


def grad(
    output: Tensor,
    inputs: list[Tensor] | tuple[Tensor, ...],
    create_graph: bool = False,
) -> list[Tensor]:
    """d(output)/d(input) for each input, without touching .grad anywhere.

    Inputs the output does not depend on get zero gradients. With
    create_graph=True the returned tensors carry their own graphs and can be
    differentiated again.
    """
    table, _ = _run_backward(output, create_graph)
    out = []
    for t in inputs:
        g = table.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


# ---------------------------------------------------------------------------
# shape helpers


def _sum_to(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (neg(g),))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_sum_to(mul(g, b), a.shape), _sum_to(mul(g, a), b.shape)),
    )


def powc(a: Tensor, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _node(
        a.data**c,
        (a,),
        lambda g: (mul(g, mul(Tensor(c), powc(a, c - 1.0))),),
    )


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _node(np.exp(a.data), (a,), None)
    out._vjp = lambda g: (mul(g, out),)
    return out


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _node(np.log(a.data), (a,), lambda g: (mul(g, powc(a, -1.0)),))


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _node(np.tanh(a.data), (a,), None)
    out._vjp = lambda g: (mul(g, add(Tensor(1.0), neg(mul(out, out)))),)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    # both where-branches evaluate, so the inactive one may overflow to inf
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    out = _node(val, (a,), None)
    out._vjp = lambda g: (mul(g, mul(out, add(Tensor(1.0), neg(out)))),)
    return out


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return _node(a.data * mask.data, (a,), lambda g: (mul(g, mask),))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    a = _wrap(a)
    scale = Tensor(np.where(a.data > 0, 1.0, alpha))
    return mul(a, scale)


def sqrt(a: Tensor) -> Tensor:
    return powc(a, 0.5)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul wants 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _node(
        np.transpose(a.data, axes),
        (a,),
        lambda g: (transpose(g, inverse),),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return _node(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_sum_to(g, old),),
    )


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    kd_shape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))
    old = a.shape

    def vjp(g):
        return (broadcast_to(reshape(g, kd_shape), old),)

    return _node(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for i in range(len(tensors)):
            key = tuple(
                slice(offsets[i], offsets[i + 1]) if ax == axis else slice(None)
                for ax in range(g.ndim)
            )
            outs.append(getitem(g, key))
        return tuple(outs)

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def getitem(a: Tensor, key) -> Tensor:
    """Basic indexing only (ints, slices); advanced indexing has its own ops."""
    a = _wrap(a)
    old = a.shape
    return _node(a.data[key], (a,), lambda g: (unslice(g, key, old),))


def unslice(g: Tensor, key, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of getitem: place ``g`` into zeros of ``shape`` at ``key``."""
    g = _wrap(g)
    data = np.zeros(shape, dtype=np.float64)
    data[key] = g.data
    return _node(data, (g,), lambda gg: (getitem(gg, key),))


def pad(a: Tensor, pad_width: tuple[tuple[int, int], ...]) -> Tensor:
    """Zero padding; adjoint is the interior slice."""
    a = _wrap(a)
    key = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _node(
        np.pad(a.data, pad_width),
        (a,),
        lambda g: (getitem(g, key),),
    )


class ColIndex:
    """Column gather index with a precomputed plan for its scatter adjoint.

    The adjoint of gathering columns is a scatter-add. Doing that with
    np.add.at is an order of magnitude slower than sorting the index once
    and using add.reduceat, so the plan (sorted order, segment starts,
    target columns) is built here and reused every backward pass.
    """

    def __init__(self, idx: np.ndarray, ncols: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        if self.idx.ndim != 1:
            raise ShapeMismatch(f"column index must be 1-D, got {self.idx.shape}")
        if self.idx.size and (self.idx.min() < 0 or self.idx.max() >= ncols):
            raise ShapeMismatch("column index out of range")
        self.ncols = int(ncols)
        self.order = np.argsort(self.idx, kind="stable")
        sorted_idx = self.idx[self.order]
        if sorted_idx.size:
            self.starts = np.concatenate(
                ([0], np.flatnonzero(np.diff(sorted_idx)) + 1)
            )
            self.targets = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.targets = np.zeros(0, dtype=np.int64)


def _as_colindex(idx, ncols: int) -> ColIndex:
    if isinstance(idx, ColIndex):
        if idx.ncols != ncols:
            raise ShapeMismatch(f"ColIndex built for {idx.ncols} cols, used with {ncols}")
        return idx
    return ColIndex(np.asarray(idx), ncols)


def take_cols(a: Tensor, idx) -> Tensor:
    """Gather columns of a 2-D tensor: out[:, j] = a[:, idx[j]]."""
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"take_cols wants a 2-D tensor, got {a.shape}")
    ix = _as_colindex(idx, a.shape[1])
    return _node(a.data[:, ix.idx], (a,), lambda g: (put_cols(g, ix),))


def put_cols(b: Tensor, idx, ncols: int | None = None) -> Tensor:
    """Scatter-add columns: the linear adjoint of take_cols.

    out has ``ncols`` columns; out[:, idx[j]] accumulates b[:, j].
    """
    b = _wrap(b)
    if b.ndim != 2:
        raise ShapeMismatch(f"put_cols wants a 2-D tensor, got {b.shape}")
    if isinstance(idx, ColIndex):
        ix = idx
    else:
        if ncols is None:
            raise ShapeMismatch("put_cols needs ncols when given a bare index")
        ix = ColIndex(np.asarray(idx), ncols)
    if ix.idx.size != b.shape[1]:
        raise ShapeMismatch(f"index length {ix.idx.size} != columns {b.shape[1]}")
    data = np.zeros((b.shape[0], ix.ncols), dtype=np.float64)
    if ix.idx.size:
        data[:, ix.targets] = np.add.reduceat(b.data[:, ix.order], ix.starts, axis=1)
    return _node(data, (b,), lambda g: (take_cols(g, ix),))


def max_last(a: Tensor) -> Tensor:
    """Max over the last axis; gradient routes to the argmax only."""
    a = _wrap(a)
    idx = np.argmax(a.data, axis=-1)
    old = a.shape
    return _node(
        a.data.max(axis=-1),
        (a,),
        lambda g: (expand_at(g, idx, old),),
    )


def expand_at(g: Tensor, idx: np.ndarray, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of max_last: place g at idx along a new last axis of zeros."""
    g = _wrap(g)
    data = np.zeros(shape, dtype=np.float64)
    np.put_along_axis(data, idx[..., None], g.data[..., None], axis=-1)
    return _node(data, (g,), lambda gg: (take_last(gg, idx),))


def take_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather one element per row along the last axis."""
    a = _wrap(a)
    old = a.shape
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    return _node(data, (a,), lambda g: (expand_at(g, idx, old),))


# ---------------------------------------------------------------------------
# numerically careful compositions


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    e = exp(add(a, neg(shift)))
    return mul(e, powc(sum_(e, axis=axis, keepdims=True), -1.0))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    return add(log(sum_(exp(add(a, neg(shift))), axis=axis, keepdims=True)), shift)
