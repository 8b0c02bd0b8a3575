"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Value` that remembers its parents and a
closure propagating the output gradient back to them. :func:`backward` walks
the recorded graph in reverse topological order.
"""

import itertools
import os
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from harmonia.exceptions import ContractError

# Additive logit used instead of -inf so every array stays finite.
NEG_INF = -1e30

_TAPE_IDS = itertools.count()
_DEBUG = os.environ.get("HARMONIA_DEBUG", "") not in ("", "0")

ArrayLike = Union["Value", np.ndarray, float, int, Sequence[float]]


def set_debug(enabled: bool) -> None:
    """Toggle the finiteness check run after every forward op."""
    global _DEBUG
    _DEBUG = enabled


class Value:
    """A node of the computation record holding a float64 array and its gradient."""

    __array_priority__ = 100.0

    def __init__(
        self,
        data: ArrayLike,
        parents: Tuple["Value", ...] = (),
        op: str = "",
        requires_grad: Optional[bool] = None,
        name: Optional[str] = None,
    ) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.parents = parents
        self.op = op
        self.name = name
        self.tape_id = next(_TAPE_IDS)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self._backward: Optional[Callable[[], None]] = None
        if _DEBUG and not np.all(np.isfinite(self.data)):
            raise ContractError(f"non-finite output from op {op or 'leaf'!r}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op or "leaf"
        return f"Value({label}, shape={self.shape})"

    def accumulate(self, grad: np.ndarray) -> None:
        """Add ``grad`` (summed down to this node's shape) into ``self.grad``."""
        if self.requires_grad:
            self.grad += _unbroadcast(grad, self.data.shape)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # arithmetic

    def __add__(self, other: ArrayLike) -> "Value":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Value":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Value":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Value":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Value":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Value":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Value":
        return div(self, other)

    def __neg__(self) -> "Value":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Value":
        return matmul(self, other)

    def __getitem__(self, key) -> "Value":
        return take(self, key)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Value":
        return vsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_value(x: ArrayLike) -> Value:
    """Wrap constants so they can enter the graph; values pass through."""
    if isinstance(x, Value):
        return x
    return Value(x, requires_grad=False)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Value:
    """Create a trainable leaf."""
    return Value(data, requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _node(data: np.ndarray, parents: Tuple[Value, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Value:
    out = Value(data, parents, op)
    if out.requires_grad:
        out._backward = lambda: backward(out.grad)
    return out


def _broadcast_check(a: Value, b: Value, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as err:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from err


# elementwise binary ops


def add(a: ArrayLike, b: ArrayLike) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check(a, b, "add")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return _node(a.data + b.data, (a, b), "add", backward)


def sub(a: ArrayLike, b: ArrayLike) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(-g)

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a: ArrayLike, b: ArrayLike) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _node(a.data * b.data, (a, b), "mul", backward)


def div(a: ArrayLike, b: ArrayLike) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check(a, b, "div")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g / b.data)
        b.accumulate(-g * a.data / (b.data * b.data))

    return _node(a.data / b.data, (a, b), "div", backward)


def logaddexp(a: ArrayLike, b: ArrayLike) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_check(a, b, "logaddexp")
    out = np.logaddexp(a.data, b.data)

    def backward(g: np.ndarray) -> None:
        a.accumulate(g * np.exp(a.data - out))
        b.accumulate(g * np.exp(b.data - out))

    return _node(out, (a, b), "logaddexp", backward)


# linear algebra


def matmul(a: ArrayLike, b: ArrayLike) -> Value:
    """Matrix product for ``[..., n] @ [n, k]`` and ``[m, n] @ [n]``."""
    a, b = as_value(a), as_value(b)
    if a.ndim < 1 or b.ndim not in (1, 2) or (b.ndim == 1 and a.ndim != 2):
        raise ContractError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    out = a.data @ b.data

    if b.ndim == 2:
        n, k = b.shape

        def backward(g: np.ndarray) -> None:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.reshape(-1, n).T @ g.reshape(-1, k))

    else:

        def backward(g: np.ndarray) -> None:
            a.accumulate(np.outer(g, b.data))
            b.accumulate(a.data.T @ g)

    return _node(out, (a, b), "matmul", backward)


# reductions and shape ops


def vsum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Value:
    x = as_value(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape))

    return _node(out, (x,), "sum", backward)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Value:
    x = as_value(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ContractError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from err

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(x.shape))

    return _node(out, (x,), "reshape", backward)


def broadcast_to(x: ArrayLike, shape: Sequence[int]) -> Value:
    x = as_value(x)
    try:
        out = np.broadcast_to(x.data, tuple(shape)).copy()
    except ValueError as err:
        raise ContractError(f"broadcast_to: {x.shape} -> {tuple(shape)}") from err

    def backward(g: np.ndarray) -> None:
        x.accumulate(g)

    return _node(out, (x,), "broadcast", backward)


def take(x: ArrayLike, key) -> Value:
    """Basic slicing or integer-array gathering."""
    x = as_value(x)
    try:
        out = np.array(x.data[key], dtype=np.float64)
    except IndexError as err:
        raise ContractError(f"index {key!r} out of range for shape {x.shape}") from err

    def backward(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x.accumulate(full)

    return _node(out, (x,), "slice", backward)


def concat(values: Iterable[ArrayLike], axis: int = 0) -> Value:
    parts = [as_value(v) for v in values]
    if not parts:
        raise ContractError("concat: nothing to concatenate")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as err:
        shapes = [p.shape for p in parts]
        raise ContractError(f"concat: incompatible shapes {shapes} on axis {axis}") from err
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray) -> None:
        for part, piece in zip(parts, np.split(g, bounds, axis=axis)):
            part.accumulate(piece)

    return _node(out, tuple(parts), "concat", backward)


def stack(values: Iterable[ArrayLike], axis: int = 0) -> Value:
    parts = [as_value(v) for v in values]
    if not parts:
        raise ContractError("stack: nothing to stack")
    if len({p.shape for p in parts}) != 1:
        raise ContractError(f"stack: shapes differ {[p.shape for p in parts]}")
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g: np.ndarray) -> None:
        for i, part in enumerate(parts):
            part.accumulate(np.take(g, i, axis=axis))

    return _node(out, tuple(parts), "stack", backward)


# elementwise nonlinearities


def exp(x: ArrayLike) -> Value:
    x = as_value(x)
    out = np.exp(x.data)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * out)

    return _node(out, (x,), "exp", backward)


def log(x: ArrayLike) -> Value:
    x = as_value(x)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g / x.data)

    return _node(np.log(x.data), (x,), "log", backward)


def sigmoid(x: ArrayLike) -> Value:
    x = as_value(x)
    out = special.expit(x.data)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * out * (1.0 - out))

    return _node(out, (x,), "sigmoid", backward)


def log_sigmoid(x: ArrayLike) -> Value:
    x = as_value(x)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * special.expit(-x.data))

    return _node(special.log_expit(x.data), (x,), "log_sigmoid", backward)


def tanh(x: ArrayLike) -> Value:
    x = as_value(x)
    out = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * (1.0 - out * out))

    return _node(out, (x,), "tanh", backward)


# normalizers


def logsumexp(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Value:
    x = as_value(x)
    out = special.logsumexp(x.data, axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            full = np.expand_dims(out, axis)
        else:
            full = out
        x.accumulate(g * np.exp(x.data - full))

    return _node(np.asarray(out), (x,), "logsumexp", backward)


def log_softmax(x: ArrayLike, axis: int = -1) -> Value:
    x = as_value(x)
    out = special.log_softmax(x.data, axis=axis)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), "log_softmax", backward)


def softmax(x: ArrayLike, axis: int = -1) -> Value:
    x = as_value(x)
    out = special.softmax(x.data, axis=axis)

    def backward(g: np.ndarray) -> None:
        x.accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), "softmax", backward)


# graph traversal


def _topological_order(root: Value) -> List[Value]:
    order: List[Value] = []
    visited = set()
    stack_: List[Tuple[Value, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.tape_id in visited:
            continue
        visited.add(node.tape_id)
        stack_.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and parent.tape_id not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Value, params: Optional[Iterable[Value]] = None, accumulate: bool = False) -> None:
    """Populate ``grad`` of every trainable leaf reachable from ``loss``.

    ``params`` gradients are zeroed first unless ``accumulate`` is set, so
    parameters the loss does not depend on end with an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None and not accumulate:
        for p in params:
            p.zero_grad()
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        if node.parents:
            node.zero_grad()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
