"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a :class:`Tensor` wraps a numpy array and,
while gradients are enabled, every primitive operation records the closure
needed to push adjoints back to its inputs. Calling ``backward`` on a scalar
replays those closures in reverse topological order. The operator set is
exactly what the forecasting model needs (dense linear algebra, pointwise
nonlinearities, and the gather / segment-sum pair used for sparse
message passing); there is no fusion, no views, no dtype zoo.

All data is float64 and all reductions run in a fixed order, so repeated
forward+backward passes over identical inputs are bit-identical.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array participating in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------
    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Tensor sharing this value but cut out of the graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Reverse sweep seeding d(self)/d(self) = 1; self must be scalar."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        raise TypeError("use slice_axis/gather for differentiable indexing")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: tuple[Tensor, ...], backward: Callable[[Array], None]) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def abs_(a) -> Tensor:
    a = as_tensor(a)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), backward)


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is a 2-d weight matrix and ``a`` is (..., k)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError(f"matmul expects a 2-d right operand, got {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            lhs = a.data.reshape(-1, a.shape[-1])
            b._accumulate(lhs.T @ g.reshape(-1, b.shape[1]))

    return _node(data, (a, b), backward)


# -- structure ----------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> None:
        pieces = np.split(g, bounds, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(data, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index]

    def backward(g: Array) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            a._accumulate(full)

    return _node(data, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _node(data, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return _node(data, (a,), backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))

    return _node(data, (a,), backward)


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g: Array, src_shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, src_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(src_shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, src_shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.shape, axis, keepdims))

    return _node(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(data.size, 1)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(_expand_reduced(g, a.shape, axis, keepdims) / count)

    return _node(data, (a,), backward)


# -- pointwise nonlinearities --------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return _node(y, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _node(np.maximum(a.data, 0.0), (a,), backward)


def leaky_relu(a, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    data = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return _node(data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> None:
        if a.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - inner))

    return _node(y, (a,), backward)


# -- sparse message-passing primitives ----------------------------------------

def gather(a: Tensor, idx: Array, axis: int) -> Tensor:
    """Select rows along ``axis`` (node -> edge expansion); idx may repeat."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def backward(g: Array) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            key = (slice(None),) * (axis % a.ndim) + (idx,)
            np.add.at(full, key, g)
            a._accumulate(full)

    return _node(data, (a,), backward)


def segment_sum(a: Tensor, offsets: Array, axis: int) -> Tensor:
    """Sum contiguous segments along ``axis`` (edge -> node reduction).

    ``offsets`` has length S+1; segment ``s`` covers ``offsets[s]:offsets[s+1]``
    and may be empty. Summation order inside a segment is index order, so the
    reduction is deterministic.
    """
    a = as_tensor(a)
    offsets = np.asarray(offsets, dtype=np.intp)
    n_seg = len(offsets) - 1
    counts = np.diff(offsets)
    axis = axis % a.ndim
    out_shape = a.shape[:axis] + (n_seg,) + a.shape[axis + 1 :]
    nonempty = counts > 0
    if a.shape[axis] == 0 or not nonempty.any():
        data = np.zeros(out_shape)
    elif nonempty.all():
        data = np.add.reduceat(a.data, offsets[:-1], axis=axis)
    else:
        # reduceat over non-empty starts only; consecutive non-empty segments
        # are adjacent in the array, so their extents stay correct.
        data = np.zeros(out_shape)
        partial = np.add.reduceat(a.data, offsets[:-1][nonempty], axis=axis)
        key = (slice(None),) * axis + (nonempty,)
        data[key] = partial

    def backward(g: Array) -> None:
        if a.requires_grad:
            a._accumulate(np.repeat(g, counts, axis=axis))

    return _node(data, (a,), backward)


# -- gradient checking ---------------------------------------------------------

def zero_grads(params: dict[str, Tensor] | Iterable[Tensor]) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = 8,
    seed: int = 0,
) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    ``f`` must rebuild the loss from the live ``params`` tensors on every
    call. ``samples_per_param=None`` checks every coordinate.
    """
    rng = np.random.default_rng(seed)
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise RuntimeError("grad_check: non-finite loss")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if samples_per_param is None or samples_per_param >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                hi = float(f().data)
                flat[c] = orig - eps
                lo = float(f().data)
            flat[c] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise RuntimeError("grad_check: non-finite loss at perturbed point")
            numeric = (hi - lo) / (2.0 * eps)
            ana = analytic[name].reshape(-1)[c]
            err = abs(ana - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
