"""Small reverse-mode automatic differentiation on top of numpy.

Every :class:`Tensor` wraps a float64 array. Operations record their
parents and a backward closure; :meth:`Tensor.backward` walks the graph in
reverse topological order and accumulates gradients with a fixed order, so
two runs on the same inputs produce bit-identical gradients.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, NonFiniteValue

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """A float64 array node in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Build the output of a custom op.

        ``backward(g)`` receives the upstream gradient and returns one
        gradient array (or None) per parent, in order.
        """
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- graph traversal -----------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every node that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionMismatch("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
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
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        try:
            data = self.data + other.data
        except ValueError as exc:
            raise DimensionMismatch(str(exc)) from None
        a, b = self.shape, other.shape
        return Tensor.from_op(data, (self, other), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        try:
            data = self.data - other.data
        except ValueError as exc:
            raise DimensionMismatch(str(exc)) from None
        a, b = self.shape, other.shape
        return Tensor.from_op(data, (self, other), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        try:
            data = self.data * other.data
        except ValueError as exc:
            raise DimensionMismatch(str(exc)) from None
        x, y = self.data, other.data
        return Tensor.from_op(
            data, (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        try:
            data = self.data / other.data
        except ValueError as exc:
            raise DimensionMismatch(str(exc)) from None
        x, y = self.data, other.data
        return Tensor.from_op(
            data, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float):
        x = self.data
        return Tensor.from_op(x ** exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions -----------------------------------------
    def relu(self):
        x = self.data
        # subgradient at exactly 0 is 0
        return Tensor.from_op(np.maximum(x, 0.0), (self,), lambda g: (g * (x > 0),))

    def sigmoid(self):
        s = expit(self.data)
        return Tensor.from_op(s, (self,), lambda g: (g * s * (1.0 - s),))

    def softplus(self):
        """log(1 + e^x), evaluated without overflow."""
        x = self.data
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        return Tensor.from_op(out, (self,), lambda g: (g * expit(x),))

    def exp(self):
        e = np.exp(self.data)
        return Tensor.from_op(e, (self,), lambda g: (g * e,))

    def log(self):
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,))

    def sqrt(self):
        r = np.sqrt(self.data)
        return Tensor.from_op(r, (self,), lambda g: (g / (2.0 * r),))

    def abs(self):
        x = self.data
        return Tensor.from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        old = self.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a: int, b: int):
        return Tensor.from_op(np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),))

    def take(self, indices, axis: int):
        """Gather along ``axis``; repeated indices accumulate in backward."""
        idx = np.asarray(indices, dtype=np.intp)
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            moved = np.moveaxis(out, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
            return (out,)

        return Tensor.from_op(np.take(self.data, idx, axis=axis), (self,), backward)

    def __getitem__(self, key):
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, key, g)
            return (out,)

        return Tensor.from_op(self.data[key], (self,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; a leading batch of ``a`` is folded into one gemm when ``b`` is 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    x, y = a.data, b.data
    if y.ndim == 2 and x.ndim > 2:
        x2 = x.reshape(-1, x.shape[-1])
        data = (x2 @ y).reshape(*x.shape[:-1], y.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ y.T).reshape(x.shape), x2.T @ g2

        return Tensor.from_op(data, (a, b), backward)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return Tensor.from_op(x @ y, (a, b), backward)


def elementwise(op: str, *args) -> Tensor:
    """Dispatch ``relu``, ``sigmoid``, ``add``, ``sub``, ``mul`` or ``scale`` by name."""
    if op == "relu":
        return as_tensor(args[0]).relu()
    if op == "sigmoid":
        return as_tensor(args[0]).sigmoid()
    if op == "scale":
        return as_tensor(args[0]) * float(args[1])
    a, b = as_tensor(args[0]), as_tensor(args[1])
    if op in ("add", "sub", "mul") and a.shape != b.shape:
        raise DimensionMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def mean_pool_time(x, factor: int) -> Tensor:
    """Average consecutive frames along axis -2 in windows of ``factor``.

    The output has ceil(T / factor) frames; a short final window is
    averaged over the frames it actually holds.
    """
    x = as_tensor(x)
    if factor == 1:
        return x
    t = x.shape[-2]
    starts = np.arange(0, t, factor)
    counts = np.minimum(starts + factor, t) - starts
    axis = x.ndim - 2
    data = np.add.reduceat(x.data, starts, axis=axis)
    scale = (1.0 / counts)[:, None]
    data = data * scale

    def backward(g):
        return (np.repeat(g * scale, counts, axis=axis),)

    return Tensor.from_op(data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [t.reshape(*t.shape[:axis], 1, *t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one entry at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteValue(f"f is non-finite near entry {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
