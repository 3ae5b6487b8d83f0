"""Dense float64 tensors with a reverse-mode tape.

Operations executed while a :class:`Tape` is active are recorded in
topological order together with the forward values their backward rule
needs. Outside a tape the same functions run as plain numpy math, which is
what evaluation uses.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


_local = threading.local()
_node_ids = itertools.count(1)


def active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A row-major float64 array plus its slot on the active tape."""

    __slots__ = ("values", "requires_grad", "node_id", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar, all routed through the recorded ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None


@dataclass
class Tape:
    """Ordered record of executed ops; use as a context manager."""

    nodes: dict[int, Node] = field(default_factory=dict)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def watch(self, t: Tensor) -> int:
        if t.node_id is None or t.node_id not in self.nodes:
            t.node_id = next(_node_ids)
            self.nodes[t.node_id] = Node("leaf", (), t.shape)
        return t.node_id

    def record(self, kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
        ids = tuple(self.watch(t) if t.requires_grad else -1 for t in inputs)
        res = Tensor(out, requires_grad=True)
        res.node_id = next(_node_ids)
        self.nodes[res.node_id] = Node(kind, ids, res.shape, backward)
        return res

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        return backward(loss, self)

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t`` from the last backward pass (zeros if unreached)."""
        if t.node_id is not None and t.node_id in self.grads:
            return self.grads[t.node_id]
        return np.zeros(t.shape)


def _emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(out)
    return tape.record(kind, inputs, out, backward)


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Accumulate d loss / d node for every node reachable from ``loss``."""
    if loss.values.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None or loss.node_id not in tape.nodes:
        raise ContractError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(())}
    for nid in sorted(tape.nodes, reverse=True):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp < 0 or gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    tape.grads = grads
    return grads


# ---------------------------------------------------------------- ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    av, bv = a.values, b.values

    def back(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _emit("matmul", (a, b), av @ bv, back)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit("add", (a, b), a.values + b.values,
                 lambda g: (g, _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit("sub", (a, b), a.values - b.values,
                 lambda g: (g, -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    av, bv = a.values, b.values
    return _emit("mul", (a, b), av * bv,
                 lambda g: (g * bv, _unbroadcast(g * av, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", (a,), a.values * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))
    return _emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args: Tensor) -> Tensor:
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return _UNARY[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(_UNARY)}") from None


def _axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def concat_axis(a: Tensor, b: Tensor, axis: int) -> Tensor:
    ax = _axis(a, axis)
    if a.ndim != b.ndim or any(
        da != db for i, (da, db) in enumerate(zip(a.shape, b.shape)) if i != ax
    ):
        raise DimensionError(f"concat along {ax}: off-axis extents differ, {a.shape} vs {b.shape}")
    n = a.shape[ax]

    def back(g):
        return np.split(g, [n], axis=ax)

    return _emit("concat", (a, b), np.concatenate([a.values, b.values], axis=ax), back)


def slice_axis(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    ax = _axis(a, axis)
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _emit("slice", (a,), a.values[idx].copy(), back)


def flip_axis(a: Tensor, axis: int) -> Tensor:
    ax = _axis(a, axis)
    return _emit("flip", (a,), np.flip(a.values, axis=ax).copy(),
                 lambda g: (np.flip(g, axis=ax).copy(),))


def reshape(a: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"bad permutation {axes} for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _emit("transpose", (a,), np.ascontiguousarray(a.values.transpose(axes)),
                 lambda g: (g.transpose(inv),))


def sum_all(a: Tensor) -> Tensor:
    return _emit("sum", (a,), np.asarray(a.values.sum()),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    ax = _axis(a, axis)
    n = a.shape[ax]

    def back(g):
        return (np.repeat(np.expand_dims(g, ax) / n, n, axis=ax),)

    return _emit("mean", (a,), a.values.mean(axis=ax), back)


def _point_axes(pred: Tensor, gt: Tensor) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {gt.shape}")
    if pred.ndim < 1 or pred.shape[-1] != 3:
        raise DimensionError(f"expected trailing coordinate axis of 3, got {pred.shape}")


def reduce_mean_sq_norm(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean over all points of the squared 3-D distance, a scalar."""
    _point_axes(pred, gt)
    diff = pred.values - gt.values
    n = diff.size // 3
    out = np.asarray(np.sum(diff * diff) / n)

    def back(g):
        d = (2.0 / n) * g * diff
        return (d, -d)

    return _emit("mean_sq_norm", (pred, gt), out, back)


def reduce_mean_norm(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean over all points of the (unsquared) 3-D distance, a scalar."""
    _point_axes(pred, gt)
    diff = pred.values - gt.values
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    n = dist.size
    out = np.asarray(dist.sum() / n)

    def back(g):
        safe = np.where(dist > 0, dist, 1.0)
        d = g / n * np.where(dist[..., None] > 0, diff / safe[..., None], 0.0)
        return (d, -d)

    return _emit("mean_norm", (pred, gt), out, back)


# ---------------------------------------------------------------- checking


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``fn`` must rebuild the scalar loss from ``params`` on every call.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    with Tape() as tape:
        loss = fn()
        if not np.isfinite(loss.values).all():
            raise NumericError(f"non-finite loss {loss.values}")
        backward(loss, tape)
    worst = 0.0
    for p in params:
        analytic = tape.grad(p)
        if not np.isfinite(analytic).all():
            raise NumericError(f"non-finite gradient for {p!r}")
        flat = p.values.reshape(-1)
        a_flat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = fn().item()
            flat[i] = orig - epsilon
            lo = fn().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite loss while perturbing {p!r}[{i}]")
            numeric = (hi - lo) / (2 * epsilon)
            rel = abs(a_flat[i] - numeric) / max(1e-12, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, rel)
    return worst
