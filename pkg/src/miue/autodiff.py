"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the handful of operations needed by the MLP, the cross-entropy loss,
the MI reduction loss and the MINE statistics network are supported.
Every node stores its value, its parents and a closure that pushes the
upstream gradient back to the parents.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A float64 array that records how it was computed."""

    __slots__ = ("data", "parents", "backward_fn", "name")
    __array_priority__ = 100.0

    def __init__(self, data, parents: tuple = (), backward_fn=None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return Tensor(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary ops

def relu(x) -> Tensor:
    x = as_tensor(x)
    # derivative at exactly 0 is taken to be 0
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.data, 0.0), (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return Tensor(out, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return Tensor(np.log(x.data), (x,), backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / out,)

    return Tensor(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def norm(x, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is 0."""
    x = as_tensor(x)
    out = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    safe = np.where(out > 0, out, 1.0)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.where(out > 0, g * x.data / safe, 0.0),)

    return Tensor(out if keepdims else np.squeeze(out, axis=axis), (x,), backward)


def dot(a, b) -> Tensor:
    """Inner product of two 1-D tensors."""
    return sum(mul(a, b))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor(x.data.reshape(shape), (x,), backward)


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.T,)

    return Tensor(x.data.T, (x,), backward)


def take_rows(x, index) -> Tensor:
    """Row gather ``x[index]`` for a 2-D tensor."""
    x = as_tensor(x)
    index = np.asarray(index)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(x.data[index], (x,), backward)


def logsumexp(x, axis=-1) -> Tensor:
    """Stable log-sum-exp; the shift is treated as a constant."""
    x = as_tensor(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    shifted = sub(x, shift)
    return add(log(sum(exp(shifted), axis=axis)), np.squeeze(shift, axis=axis))


# ---------------------------------------------------------------------------
# differentiation

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(root: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``root`` with respect to each of ``leaves``.

    A leaf that does not take part in the computation gets a zero gradient
    of its own shape.
    """
    if root.data.size != 1:
        raise ValueError(f"grad() needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        if node.backward_fn is None:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [np.array(grads.get(id(leaf), np.zeros_like(leaf.data)), dtype=np.float64)
            for leaf in leaves]


def value_and_grad(fn: Callable[..., Tensor], *arrays: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn`` on fresh leaves built from ``arrays`` and differentiate."""
    leaves = [Tensor(a) for a in arrays]
    out = fn(*leaves)
    return out.item(), grad(out, leaves)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            idx = tuple(int(j) for j in np.unravel_index(i, x.shape))
            raise FloatingPointError(f"non-finite function value near coordinate {idx}")
        g[i] = (fp - fm) / (2.0 * h)
    return out
