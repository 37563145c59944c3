"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation on a :class:`Tensor` that requires gradients records a
:class:`Node` holding its inputs and a backward rule. The graph is rebuilt on
every forward pass (define-by-run); :func:`backward` collects the reachable
nodes into a :class:`Tape` ordered by recording sequence and replays it in
reverse, which visits each node only after all of its consumers.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import numpy as np

from disent_toolkit.errors import ShapeError

# Lower bound applied to log arguments and to |denominator| in div.
EPS = 1e-12

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_sequence = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the duration of the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    """Return whether operations are currently recorded."""
    return _grad_enabled


@dataclass(eq=False)
class Node:
    """One recorded operation: its inputs and how to push gradients into them."""

    seq: int
    op: str
    inputs: tuple[Tensor, ...]
    backward: Backward


class Tape:
    """Ordered list of recorded operations reachable from a root tensor."""

    def __init__(self, records: list[tuple[Node, Tensor]]) -> None:
        self.records = records

    @classmethod
    def collect(cls, root: Tensor) -> Tape:
        """Gather every node reachable from ``root``, newest first."""
        seen: set[int] = set()
        records: list[tuple[Node, Tensor]] = []
        stack = [root]
        while stack:
            tensor = stack.pop()
            node = tensor.node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            records.append((node, tensor))
            stack.extend(node.inputs)
        records.sort(key=lambda record: record[0].seq, reverse=True)
        return cls(records)

    def __len__(self) -> int:
        return len(self.records)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        """Propagate ``seed`` (d root / d root) back to every leaf."""
        pending: dict[int, np.ndarray] = {id(root): seed}
        for node, output in self.records:
            grad = pending.pop(id(output), None)
            if grad is None:
                continue
            for source, source_grad in zip(node.inputs, node.backward(grad)):
                if source_grad is None or not source.requires_grad:
                    continue
                if source.node is None:
                    source.accumulate_grad(source_grad)
                    continue
                key = id(source)
                pending[key] = pending[key] + source_grad if key in pending else source_grad


class Tensor:
    """An n-dimensional float64 array participating in the gradient tape."""

    # Make numpy defer to our reflected operators (ndarray + Tensor -> Tensor).
    __array_ufunc__ = None

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.node = None
        tensor.name = None
        return tensor

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        """Return a tensor sharing data but cut from the tape."""
        return Tensor._wrap(self.data, requires_grad=False)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators ----------------------------------------------------------

    def __add__(self, other: Any) -> Tensor:
        return elementwise("add", self, other)

    def __radd__(self, other: Any) -> Tensor:
        return elementwise("add", other, self)

    def __sub__(self, other: Any) -> Tensor:
        return elementwise("sub", self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return elementwise("sub", other, self)

    def __mul__(self, other: Any) -> Tensor:
        return elementwise("mul", self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return elementwise("mul", other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return elementwise("div", self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return elementwise("div", other, self)

    def __pow__(self, exponent: Any) -> Tensor:
        return elementwise("pow", self, exponent)

    def __neg__(self) -> Tensor:
        return elementwise("neg", self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, as_tensor(other))

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)

    # -- elementwise functions ----------------------------------------------

    def exp(self) -> Tensor:
        return elementwise("exp", self)

    def log(self) -> Tensor:
        return elementwise("log", self)

    def abs(self) -> Tensor:
        return elementwise("abs", self)

    def relu(self) -> Tensor:
        return elementwise("relu", self)

    def leaky_relu(self, slope: float = 0.2) -> Tensor:
        return leaky_relu(self, slope)

    def sigmoid(self) -> Tensor:
        return elementwise("sigmoid", self)

    def softplus(self) -> Tensor:
        return elementwise("softplus", self)

    def tanh(self) -> Tensor:
        return elementwise("tanh", self)

    def clip(self, low: float, high: float) -> Tensor:
        return clip(self, low, high)

    # -- reductions and shape ops -------------------------------------------

    def sum(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        return reduce("mean", self, axis, keepdims)

    def logsumexp(self, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
        return reduce("logsumexp", self, axis, keepdims)

    def reshape(self, *shape: int | Sequence[int]) -> Tensor:
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return reshape(self, tuple(shape))  # type: ignore[arg-type]

    def transpose(self, axes: Sequence[int] | None = None) -> Tensor:
        return transpose(self, axes)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def as_tensor(value: Any) -> Tensor:
    """Wrap scalars and arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], backward_rule: Backward, op: str) -> Tensor:
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        out.node = Node(next(_sequence), op, inputs, backward_rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` under trailing-dimension broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def _safe_denominator(values: np.ndarray) -> np.ndarray:
    return np.where(np.abs(values) < EPS, np.where(values < 0, -EPS, EPS), values)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, op)
    x, y = a.data, b.data

    if op == "add":
        out = x + y

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    elif op == "sub":
        out = x - y

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    elif op == "mul":
        out = x * y

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    elif op == "div":
        safe = _safe_denominator(y)
        out = x / safe

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g / safe, x.shape), _unbroadcast(-g * x / (safe * safe), y.shape)

    elif op == "pow":
        out = np.power(x, y)

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
            grad_x = _unbroadcast(g * y * np.power(x, y - 1.0), x.shape)
            if not b.requires_grad:
                return grad_x, None
            grad_y = _unbroadcast(g * out * np.log(np.maximum(x, EPS)), y.shape)
            return grad_x, grad_y

    else:
        raise ValueError(f"unknown binary op: {op}")

    return _record(out, (a, b), rule, op)


def _unary(op: str, a: Tensor) -> Tensor:
    x = a.data

    if op == "neg":
        out = -x
        rule = lambda g: (-g,)  # noqa: E731
    elif op == "exp":
        out = np.exp(x)
        rule = lambda g: (g * out,)  # noqa: E731
    elif op == "log":
        clamped = np.maximum(x, EPS)
        out = np.log(clamped)
        rule = lambda g: (np.where(x >= EPS, g / clamped, 0.0),)  # noqa: E731
    elif op == "abs":
        out = np.abs(x)
        rule = lambda g: (g * np.sign(x),)  # noqa: E731
    elif op == "relu":
        out = np.maximum(x, 0.0)
        rule = lambda g: (g * (x > 0),)  # noqa: E731
    elif op == "sigmoid":
        out = _stable_sigmoid(x)
        rule = lambda g: (g * out * (1.0 - out),)  # noqa: E731
    elif op == "softplus":
        out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
        rule = lambda g: (g * _stable_sigmoid(x),)  # noqa: E731
    elif op == "tanh":
        out = np.tanh(x)
        rule = lambda g: (g * (1.0 - out * out),)  # noqa: E731
    else:
        raise ValueError(f"unknown unary op: {op}")

    return _record(out, (a,), rule, op)


BINARY_OPS = frozenset({"add", "sub", "mul", "div", "pow"})
UNARY_OPS = frozenset({"neg", "exp", "log", "abs", "relu", "sigmoid", "softplus", "tanh"})


def elementwise(op: str, a: Any, b: Any = None) -> Tensor:
    """Apply an elementwise op; binary ops broadcast over trailing dimensions."""
    if op in BINARY_OPS:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _binary(op, as_tensor(a), as_tensor(b))
    if op in UNARY_OPS:
        return _unary(op, as_tensor(a))
    raise ValueError(f"unknown op kind: {op}")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    out = np.where(x > 0, x, slope * x)
    return _record(out, (a,), lambda g: (np.where(x > 0, g, slope * g),), "leaky_relu")


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp values; gradient passes only inside the band."""
    x = a.data
    out = np.clip(x, low, high)
    inside = (x >= low) & (x <= high)
    return _record(out, (a,), lambda g: (g * inside,), "clip")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    out = x @ y
    return _record(out, (a, b), lambda g: (g @ y.T, x.T @ g), "matmul")


def _normalize_axes(axes: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < max(ndim, 1):
            raise ShapeError(f"axis {axis} out of range for {ndim}-D tensor")
        normalized.append(axis % ndim if ndim else 0)
    return tuple(sorted(set(normalized)))


def reduce(op: str, x: Tensor, axes: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    """Sum, mean or numerically stable log-sum-exp over ``axes``."""
    axes = _normalize_axes(axes, x.ndim)
    for axis in axes:
        if x.shape[axis] == 0:
            raise ShapeError(f"{op}: cannot reduce over empty axis {axis} of shape {x.shape}")
    data = x.data
    count = math.prod(x.shape[axis] for axis in axes)

    def expand(g: np.ndarray) -> np.ndarray:
        return g if keepdims else np.expand_dims(g, axes)

    if op == "sum":
        out = data.sum(axis=axes, keepdims=keepdims)
        rule = lambda g: (np.broadcast_to(expand(g), data.shape),)  # noqa: E731
    elif op == "mean":
        out = data.sum(axis=axes, keepdims=keepdims) / count
        rule = lambda g: (np.broadcast_to(expand(g) / count, data.shape),)  # noqa: E731
    elif op == "logsumexp":
        shift = data.max(axis=axes, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        kept = np.log(np.exp(data - shift).sum(axis=axes, keepdims=True)) + shift
        out = kept if keepdims else np.squeeze(kept, axis=axes)
        rule = lambda g: (expand(g) * np.exp(data - kept),)  # noqa: E731
    else:
        raise ValueError(f"unknown reduction: {op}")
    return _record(np.asarray(out), (x,), rule, op)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}") from exc
    source_shape = x.shape
    return _record(out, (x,), lambda g: (g.reshape(source_shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    order = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(order))
    return _record(x.data.transpose(order), (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x: Tensor, index: Any) -> Tensor:
    """Basic or fancy indexing; the backward pass scatter-adds."""
    out = np.array(x.data[index])

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _record(out, (x,), rule, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"cannot concatenate shapes {shapes} along axis {axis}") from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    return logits - logits.logsumexp(axis=axis, keepdims=True)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        if not loss.requires_grad:
            raise ShapeError("loss is not on the gradient tape")
        loss.accumulate_grad(seed)
        return
    Tape.collect(loss).replay(loss, seed)


def zero_grad(params: dict[str, Tensor] | Sequence[Tensor]) -> None:
    values = params.values() if isinstance(params, dict) else params
    for param in values:
        param.grad = None
