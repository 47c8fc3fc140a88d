"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus a list of (parent, grad_fn) edges; backward()
walks the graph in reverse topological order (iteratively, so deep unrolled
recurrent graphs do not hit the recursion limit). Gradients accumulate on
every node that requires grad; leaves keep theirs for the optimizer.

Only the ops the package actually trains with are provided.
"""

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "requires_grad")

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.value)
        for node in order:
            g = node.grad
            if g is None:
                continue
            for parent, fn in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = fn(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        return div(self, other)


def _toposort(root):
    order = []
    state = {}
    stack = [root]
    while stack:
        node = stack[-1]
        st = state.get(id(node), 0)
        if st == 0:
            state[id(node)] = 1
            for parent, _ in node.parents:
                if parent.requires_grad and state.get(id(parent), 0) == 0:
                    stack.append(parent)
        else:
            stack.pop()
            if st == 1:
                state[id(node)] = 2
                order.append(node)
    return list(reversed(order))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce grad back to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value / b.value,
        parents=(
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / (b.value**2), b.value.shape)),
        ),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def back_a(g):
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv)
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv
        return g @ bv.T

    def back_b(g):
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, g)
        if av.ndim == 1 and bv.ndim == 1:
            return g * av
        return av.T @ g

    return Tensor(av @ bv, parents=((a, back_a), (b, back_b)))


def exp(t):
    t = as_tensor(t)
    out = np.exp(t.value)
    return Tensor(out, parents=((t, lambda g: g * out),))


def log(t):
    t = as_tensor(t)
    return Tensor(np.log(t.value), parents=((t, lambda g: g / t.value),))


def tanh(t):
    t = as_tensor(t)
    out = np.tanh(t.value)
    return Tensor(out, parents=((t, lambda g: g * (1.0 - out**2)),))


def sigmoid(t):
    t = as_tensor(t)
    out = 1.0 / (1.0 + np.exp(-t.value))
    return Tensor(out, parents=((t, lambda g: g * out * (1.0 - out)),))


def elu(t):
    t = as_tensor(t)
    out = np.where(t.value > 0.0, t.value, np.expm1(t.value))
    return Tensor(
        out, parents=((t, lambda g: g * np.where(t.value > 0.0, 1.0, out + 1.0)),)
    )


def square(t):
    t = as_tensor(t)
    return Tensor(t.value**2, parents=((t, lambda g: g * 2.0 * t.value),))


def tsum(t, axis=None):
    t = as_tensor(t)
    out = t.value.sum(axis=axis)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, t.value.shape).astype(np.float64)
        return np.broadcast_to(np.expand_dims(g, axis), t.value.shape).astype(np.float64)

    return Tensor(out, parents=((t, back),))


def tmean(t):
    t = as_tensor(t)
    n = t.value.size
    return Tensor(
        t.value.mean(), parents=((t, lambda g: np.broadcast_to(g / n, t.value.shape).astype(np.float64)),)
    )


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.value <= b.value
    return Tensor(
        np.where(mask, a.value, b.value),
        parents=(
            (a, lambda g: _unbroadcast(g * mask, a.value.shape)),
            (b, lambda g: _unbroadcast(g * (~mask), b.value.shape)),
        ),
    )


def clip(t, lo, hi):
    """Clamp by constants; gradient is identity strictly inside the range."""
    t = as_tensor(t)
    inside = (t.value > lo) & (t.value < hi)
    return Tensor(
        np.clip(t.value, lo, hi),
        parents=((t, lambda g: g * inside),),
    )
