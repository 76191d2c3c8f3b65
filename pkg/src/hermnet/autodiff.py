"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive records its vector-Jacobian product as a closure written in
terms of other primitives. Running the backward pass with
``create_graph=True`` therefore records a new differentiable graph, which is
how force-matching losses are differentiated with respect to parameters.

Broadcasting is deliberately narrow: elementwise binary ops accept equal
shapes, a 0-d scalar operand, or a 1-d operand matching the last axis of the
other (per-channel scaling). Everything else goes through :func:`einsum`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "no_grad",
    "enable_grad",
    "is_grad_enabled",
    "grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "einsum",
    "tsum",
    "reshape",
    "transpose",
    "concat",
    "take",
    "split",
    "gather",
    "scatter_sum",
    "sigmoid",
    "silu",
    "sin",
    "cos",
    "sqrt",
    "inner",
    "scale_vector",
    "outer",
    "norm",
    "broadcast_to",
    "sum_to",
]


class ShapeError(ValueError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that suspends tape recording on the current thread."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    """A float64 array plus, when recorded, the op that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_vjp", "_consumed")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is np.ndarray and data.dtype == np.float64 and data.flags.c_contiguous:
            self.data = data
        else:
            arr = np.asarray(data, dtype=np.float64)
            # ascontiguousarray would promote 0-d scalars to 1-d
            self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._consumed = False

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

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    def sum(self, axis=None) -> Tensor:
        return tsum(self, axis)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf.

        A recorded graph may be consumed this way only once.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("this tape has already been consumed by backward()")
        self._consumed = True
        order = _toposort([self])
        leaves = [n for n in order if n._vjp is None and n.requires_grad]
        grads = _backprop([self], [np.ones_like(self.data)], order, leaves, False)
        for leaf, g in zip(leaves, grads):
            leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if getattr(_state, "enabled", True) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# ---------------------------------------------------------------- graph walk


def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen or not root.requires_grad:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def _backprop(roots, seeds, order, inputs, create_graph):
    adj: dict[int, Tensor] = {}
    for r, s in zip(roots, seeds):
        s = _as_tensor(s)
        adj[id(r)] = adj[id(r)] + s if id(r) in adj else s
    with _grad_mode(create_graph):
        for node in reversed(order):
            g = adj.get(id(node))
            if g is None or node._vjp is None:
                continue
            pgrads = node._vjp(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                adj[key] = adj[key] + pg if key in adj else pg
    out = []
    for x in inputs:
        g = adj.get(id(x))
        if g is None:
            g = Tensor(np.zeros_like(x.data))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    Does not consume the tape. With ``create_graph=True`` the returned tensors
    are themselves recorded, so they can be differentiated again.
    """
    if output.data.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return [Tensor(np.zeros_like(x.data)) for x in inputs]
    order = _toposort([output])
    return _backprop([output], [np.ones_like(output.data)], order, list(inputs), create_graph)


# ------------------------------------------------------------- broadcasting


def _broadcast_kind(sa, sb):
    if sa == sb:
        return None
    if len(sa) == 0 or len(sb) == 0:
        return "scalar"
    if len(sb) == 1 and len(sa) >= 1 and sa[-1] == sb[0]:
        return "channel"
    if len(sa) == 1 and len(sb) >= 1 and sb[-1] == sa[0]:
        return "channel"
    raise ShapeError(f"incompatible shapes {sa} and {sb}: only scalar or last-axis broadcasting is allowed")


def sum_to(x: Tensor, shape) -> Tensor:
    """Reduce ``x`` onto ``shape`` by summing the broadcast leading axes."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes).reshape(shape)
    src_shape = x.shape
    return _record(data, (x,), lambda g: (broadcast_to(g, src_shape),), "sum_to")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()
    src_shape = x.shape
    return _record(data, (x,), lambda g: (sum_to(g, src_shape),), "broadcast_to")


def _unbroadcast(g: Tensor, shape) -> Tensor:
    return g if g.shape == tuple(shape) else sum_to(g, shape)


# ------------------------------------------------------- elementwise binary


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(neg(g), sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(
        a.data * b.data, (a, b), lambda g: (_unbroadcast(mul(g, b), sa), _unbroadcast(mul(g, a), sb)), "mul"
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("tensor division by zero")
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(div(g, b), sa) if a.requires_grad else None
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return _record(a.data / b.data, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, (a,), lambda g: (neg(g),), "neg")


# --------------------------------------------------------------- contraction


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _record(a.data @ b.data, (a, b), lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)), "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _record(a.data.T.copy(), (a,), lambda g: (transpose(g),), "transpose")


@lru_cache(maxsize=None)
def _parse_einsum(spec: str):
    lhs, out = spec.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for sub_, other in ((ia, ib), (ib, ia)):
        if len(set(sub_)) != len(sub_):
            raise ShapeError(f"einsum '{spec}': repeated index within an operand")
        for c in sub_:
            if c not in out and c not in other:
                raise ShapeError(f"einsum '{spec}': index '{c}' is summed out of a single operand")
    return ia, ib, out


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand Einstein summation, e.g. ``einsum("nif,nf->nif", v, s)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    ia, ib, out = _parse_einsum(spec)
    if len(ia) != a.ndim or len(ib) != b.ndim:
        raise ShapeError(f"einsum '{spec}' got operands of shapes {a.shape}, {b.shape}")
    dims: dict[str, int] = {}
    for sub_, shp in ((ia, a.shape), (ib, b.shape)):
        for c, n in zip(sub_, shp):
            if dims.setdefault(c, n) != n:
                raise ShapeError(f"einsum '{spec}': index '{c}' has extents {dims[c]} and {n}")

    def vjp(g):
        ga = einsum(f"{out},{ib}->{ia}", g, b) if a.requires_grad else None
        gb = einsum(f"{out},{ia}->{ib}", g, a) if b.requires_grad else None
        return ga, gb

    return _record(np.einsum(spec, a.data, b.data), (a, b), vjp, "einsum")


def inner(a, b) -> Tensor:
    """Inner product over the spatial axis: (n, 3, F), (n, 3, F) -> (n, F)."""
    return einsum("nif,nif->nf", a, b)


def scale_vector(v, s) -> Tensor:
    """Scale each vector channel by a scalar: (n, 3, F), (n, F) -> (n, 3, F)."""
    return einsum("nif,nf->nif", v, s)


def outer(r, c) -> Tensor:
    """Per-row outer product of a 3-vector with channels: (n, 3), (n, F) -> (n, 3, F)."""
    return einsum("ni,nf->nif", r, c)


# ------------------------------------------------------------ reductions etc


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    src_shape = a.shape
    if axis is None:
        return _record(np.asarray(a.data.sum()), (a,), lambda g: (broadcast_to(g, src_shape),), "sum")
    axis = axis % a.ndim
    kept = src_shape[:axis] + (1,) + src_shape[axis + 1 :]
    data = a.data.sum(axis=axis)
    return _record(data, (a,), lambda g: (broadcast_to(reshape(g, kept), src_shape),), "sum")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src_shape = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src_shape} to {shape}") from exc
    return _record(data, (a,), lambda g: (reshape(g, src_shape),), "reshape")


def concat(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    items = [_as_tensor(x) for x in items]
    ndim = items[0].ndim
    axis = axis % ndim
    for x in items[1:]:
        if x.ndim != ndim or any(x.shape[i] != items[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in items]}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in items])
    data = np.concatenate([x.data for x in items], axis=axis)

    def vjp(g):
        return tuple(take(g, int(bounds[k]), int(bounds[k + 1]), axis) for k in range(len(items)))

    return _record(data, items, vjp, "concat")


def take(a, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of length {a.shape[axis]}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    src_shape = a.shape
    return _record(a.data[index].copy(), (a,), lambda g: (_pad(g, start, stop, axis, src_shape),), "take")


def _pad(g: Tensor, start: int, stop: int, axis: int, shape) -> Tensor:
    index = [slice(None)] * len(shape)
    index[axis] = slice(start, stop)
    data = np.zeros(shape)
    data[tuple(index)] = g.data
    return _record(data, (g,), lambda h: (take(h, start, stop, axis),), "pad")


def split(a, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    a = _as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        out.append(take(a, start, start + n, axis))
        start += n
    return out


def gather(a, index) -> Tensor:
    """Rows ``a[index]`` along axis 0."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]
    return _record(a.data[index], (a,), lambda g: (scatter_sum(g, index, n),), "gather")


def scatter_sum(a, index, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets: ``out[index[k]] += a[k]``."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != a.shape[:1]:
        raise ShapeError(f"scatter index of shape {index.shape} does not match rows of {a.shape}")
    data = np.zeros((n,) + a.shape[1:])
    np.add.at(data, index, a.data)
    return _record(data, (a,), lambda g: (gather(g, index),), "scatter_sum")


# ---------------------------------------------------------------- unary maps


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def vjp(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _record(data, (a,), vjp, "sigmoid")


def silu(a) -> Tensor:
    """Smooth gated-linear activation ``x * sigmoid(x)``."""
    a = _as_tensor(a)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def vjp(g):
        s = sigmoid(a)
        return (mul(g, add(s, mul(a, mul(s, sub(1.0, s))))),)

    return _record(a.data * sig, (a,), vjp, "silu")


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return _record(np.sin(a.data), (a,), lambda g: (mul(g, cos(a)),), "sin")


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return _record(np.cos(a.data), (a,), lambda g: (neg(mul(g, sin(a))),), "cos")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of a negative entry")
    data = np.sqrt(a.data)

    def vjp(g):
        return (div(mul(g, 0.5), sqrt(a)),)

    return _record(data, (a,), vjp, "sqrt")


def norm(v, eps: float = 0.0) -> Tensor:
    """Euclidean norm over the spatial axis of (n, 3, F) channels.

    With ``eps > 0`` returns ``sqrt(|v|^2 + eps) - sqrt(eps)``, which is zero
    at ``v = 0`` and differentiable everywhere.
    """
    sq = inner(v, v)
    if eps == 0.0:
        return sqrt(sq)
    return sub(sqrt(add(sq, eps)), float(np.sqrt(eps)))


# --------------------------------------------------------------- dispatch

OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "transpose": transpose,
    "sum": tsum,
    "concat": lambda *xs, axis=-1: concat(xs, axis),
    "split": split,
    "silu": silu,
    "sigmoid": sigmoid,
    "inner": inner,
    "scale_vector": scale_vector,
    "outer": outer,
    "norm": norm,
    "sin": sin,
    "cos": cos,
    "sqrt": sqrt,
    "gather": gather,
    "scatter_sum": scatter_sum,
    "einsum": einsum,
}


def forward_op(kind: str, *inputs, **kwargs):
    """Apply the op named ``kind``; equivalent to calling the function directly."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}; known: {sorted(OPS)}") from None
    return fn(*inputs, **kwargs)


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Consume ``root``'s tape and return ``{id(leaf): adjoint}`` for every tracked leaf.

    Leaves also get their adjoint accumulated into ``.grad``.
    """
    root.backward()
    return {id(n): n.grad for n in _toposort([root]) if n._vjp is None and n.requires_grad}
