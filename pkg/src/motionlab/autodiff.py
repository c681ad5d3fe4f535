"""Minimal reverse-mode automatic differentiation on an explicit tape.

Every differentiable value is a :class:`TapeTensor` wrapping a float64
numpy array.  Forward ops append nodes to the currently active
:class:`Tape`; :func:`backward` replays the tape once in reverse and
returns a gradient map keyed by tensor uid.  The tape node count doubles
as a deterministic memory proxy: one node per recorded forward op, reset
explicitly between optimizer steps.

Scope is deliberately small: dense rank-2 arrays, broadcasting up to
rank 2, no convolutions, no rematerialization.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "TapeTensor",
    "recording",
    "active_tape",
    "constant",
    "parameter",
    "stop_gradient",
    "backward",
    "graph_metrics",
    "forward_op",
]

_UID = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


class Node:
    """One recorded forward op: kind, inputs, and its vector-Jacobian rule."""

    __slots__ = ("kind", "inputs", "out_uid", "vjp")

    def __init__(self, kind, inputs, out_uid, vjp):
        self.kind = kind
        self.inputs = inputs
        self.out_uid = out_uid
        self.vjp = vjp


class Tape:
    """Ordered record of forward ops; node_count is the memory proxy."""

    __slots__ = ("nodes", "_peak")

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._peak = 0

    def record(self, node: Node) -> int:
        self.nodes.append(node)
        n = len(self.nodes)
        if n > self._peak:
            self._peak = n
        return n - 1

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def peak_node_count(self) -> int:
        return self._peak

    def reset(self) -> None:
        self.nodes.clear()
        self._peak = 0


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def recording(tape: Tape) -> Iterator[Tape]:
    """Activate `tape` for the duration of the block."""
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


class TapeTensor:
    """A float64 value array with optional tape linkage.

    Values are immutable by convention: ops allocate new arrays, and the
    optimizer replaces parameters with fresh tensors rather than writing
    in place.
    """

    __slots__ = ("values", "requires_grad", "node_id", "tape", "uid")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.uid = next(_UID)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"TapeTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> TapeTensor:
    if isinstance(x, TapeTensor):
        return x
    return TapeTensor(x)


def constant(x) -> TapeTensor:
    """Wrap a value with gradient tracking disabled."""
    return TapeTensor(x, requires_grad=False)


def parameter(x) -> TapeTensor:
    """Wrap a value as a trainable leaf."""
    return TapeTensor(x, requires_grad=True)


def stop_gradient(x: TapeTensor) -> TapeTensor:
    """Value-identical copy with all tape linkage severed.

    Idempotent: the result is a leaf that does not require gradients, so
    no gradient flows into the producers of `x`.
    """
    return TapeTensor(x.values, requires_grad=False)


def _emit(kind: str, inputs: Sequence[TapeTensor], out_values: np.ndarray,
          vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> TapeTensor:
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return TapeTensor(out_values)
    out = TapeTensor(out_values, requires_grad=True)
    node = Node(kind, tuple(inputs), out.uid, vjp)
    out.node_id = tape.record(node)
    out.tape = tape
    return out


def backward(root: TapeTensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar root; returns {tensor uid: gradient}.

    Each tape node up to the root is visited exactly once.  Multiple
    paths into the same tensor accumulate by summation.  A detached root
    yields an empty map.
    """
    if root.values.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if root.node_id is None or root.tape is None:
        return {}
    grads: dict[int, np.ndarray] = {root.uid: np.ones_like(root.values)}
    nodes = root.tape.nodes
    for idx in range(root.node_id, -1, -1):
        node = nodes[idx]
        g_out = grads.get(node.out_uid)
        if g_out is None:
            continue
        for inp, g in zip(node.inputs, node.vjp(g_out)):
            if g is None or not inp.requires_grad:
                continue
            acc = grads.get(inp.uid)
            grads[inp.uid] = g if acc is None else acc + g
    return grads


def graph_metrics(tape: Tape) -> dict[str, int]:
    """Live and peak node counts since the last reset."""
    return {"node_count": tape.node_count, "peak_node_count": tape.peak_node_count}


# ---------------------------------------------------------------------------
# elementwise binary ops (broadcasting limited to rank <= 2)


def _check_broadcast(kind: str, a: TapeTensor, b: TapeTensor) -> tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None
    if len(shape) > 2:
        raise ShapeError(f"{kind}: broadcast result rank {len(shape)} exceeds 2")
    return shape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> TapeTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.values + b.values, vjp)


def sub(a, b) -> TapeTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), a.values - b.values, vjp)


def mul(a, b) -> TapeTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def vjp(g):
        return (_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape))

    return _emit("mul", (a, b), a.values * b.values, vjp)


def div(a, b) -> TapeTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.values / b.values

    def vjp(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * out / b.values, b.shape))

    return _emit("div", (a, b), out, vjp)


def neg(a) -> TapeTensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.values, lambda g: (-g,))


# ---------------------------------------------------------------------------
# matmul (2-d and 1-d operand combinations)


def matmul(a, b) -> TapeTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv

    if a.ndim == 2 and b.ndim == 2:
        def vjp(g):
            return g @ bv.T, av.T @ g
    elif a.ndim == 1 and b.ndim == 2:
        def vjp(g):
            return bv @ g, np.outer(av, g)
    elif a.ndim == 2 and b.ndim == 1:
        def vjp(g):
            return np.outer(g, bv), av.T @ g
    else:  # 1-d @ 1-d -> scalar
        def vjp(g):
            return g * bv, g * av

    return _emit("matmul", (a, b), out, vjp)


def transpose(a) -> TapeTensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: rank-2 required, got {a.shape}")
    return _emit("transpose", (a,), a.values.T.copy(), lambda g: (g.T,))


def reshape(a, shape) -> TapeTensor:
    a = as_tensor(a)
    in_shape = a.shape
    out = a.values.reshape(shape)
    return _emit("reshape", (a,), out, lambda g: (g.reshape(in_shape),))


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors: Sequence[TapeTensor], axis: int = 0) -> TapeTensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: needs at least one input")
    out = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", tuple(parts), out, vjp)


def take_slice(a, start: int, stop: int, axis: int = 0) -> TapeTensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.values[idx].copy()

    def vjp(g):
        full = np.zeros_like(a.values)
        full[idx] = g
        return (full,)

    return _emit("slice", (a,), out, vjp)


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> TapeTensor:
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("reduce", (a,), out, vjp)


def reduce_mean(a, axis: int | None = None, keepdims: bool = False) -> TapeTensor:
    a = as_tensor(a)
    out = a.values.mean(axis=axis, keepdims=keepdims)
    count = a.values.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return _emit("reduce", (a,), out, vjp)


# ---------------------------------------------------------------------------
# activations


def tanh(a) -> TapeTensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _emit("activation", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> TapeTensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.values))
    return _emit("activation", (a,), out, lambda g: (g * out * (1.0 - out),))


def exp(a) -> TapeTensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _emit("activation", (a,), out, lambda g: (g * out,))


def log(a) -> TapeTensor:
    a = as_tensor(a)
    return _emit("activation", (a,), np.log(a.values), lambda g: (g / a.values,))


def sqrt(a) -> TapeTensor:
    a = as_tensor(a)
    out = np.sqrt(a.values)
    return _emit("activation", (a,), out, lambda g: (g * 0.5 / out,))


def softplus(a) -> TapeTensor:
    """log(1 + exp(x)), computed stably."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.values)
    return _emit("activation", (a,), out,
                 lambda g: (g / (1.0 + np.exp(-a.values)),))


def huber(a, delta: float = 1.0) -> TapeTensor:
    """Elementwise smooth clipped-quadratic penalty.

    0.5*r^2 inside |r| <= delta, linear with slope delta outside; the
    derivative is clip(r, -delta, delta).
    """
    a = as_tensor(a)
    absv = np.abs(a.values)
    out = np.where(absv <= delta, 0.5 * a.values ** 2, delta * (absv - 0.5 * delta))

    def vjp(g):
        return (g * np.clip(a.values, -delta, delta),)

    return _emit("activation", (a,), out, vjp)


_ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "softplus": softplus,
    "huber": huber,
}

_REDUCES = {"sum": reduce_sum, "mean": reduce_mean}


def forward_op(kind: str, inputs: Sequence, **kwargs) -> TapeTensor:
    """Dispatch a forward op by kind.

    Kinds: matmul, add, mul, activation (kwarg `name`), concat (kwarg
    `axis`), slice (kwargs `start`, `stop`, `axis`), reduce (kwargs
    `op`, `axis`, `keepdims`).
    """
    if kind == "add":
        return add(*inputs)
    if kind == "mul":
        return mul(*inputs)
    if kind == "matmul":
        return matmul(*inputs)
    if kind == "activation":
        name = kwargs.pop("name")
        try:
            fn = _ACTIVATIONS[name]
        except KeyError:
            raise ValueError(f"unknown activation {name!r}") from None
        return fn(*inputs, **kwargs)
    if kind == "concat":
        return concat(inputs, **kwargs)
    if kind == "slice":
        return take_slice(*inputs, **kwargs)
    if kind == "reduce":
        op = kwargs.pop("op", "sum")
        try:
            fn = _REDUCES[op]
        except KeyError:
            raise ValueError(f"unknown reduce op {op!r}") from None
        return fn(*inputs, **kwargs)
    raise ValueError(f"unknown op kind {kind!r}")
