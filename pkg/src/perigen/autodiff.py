"""Minimal reverse-mode automatic differentiation on numpy float64 arrays.

A Tensor wraps an ndarray and records a backward closure per operation.
Calling :func:`backward` on a scalar Tensor accumulates gradients into the
``grad`` attribute of every reachable leaf.  Inside a :class:`no_grad` block
ops skip recording, which turns the same code into a plain numpy forward pass.

Only the operations needed by this package are provided; everything is
float64 and shapes follow numpy broadcasting.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(a for a, s in enumerate(shape) if s == 1 and grad.shape[a] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("value", "grad", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        if _GRAD_ENABLED:
            self._parents = parents
            self._bw = bw
        else:
            self._parents = ()
            self._bw = None

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar -------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, bw) -> Tensor:
    return Tensor(value, parents, bw if _GRAD_ENABLED else None)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def bw(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def bw(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def bw(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return _make(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value

    def bw(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return _make(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av @ bv

    def bw(g):
        g = np.asarray(g)
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g * bv, g * av

    return _make(out, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.value**p

    def bw(g):
        return (g * p * a.value ** (p - 1),)

    return _make(out, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.value)

    def bw(g):
        return (g / a.value,)

    return _make(out, (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)

    def bw(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.value, 0.0)

    def bw(g):
        return (g * (a.value > 0.0),)

    return _make(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-np.abs(a.value)))
    out = np.where(a.value >= 0.0, out, 1.0 - out)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    a = as_tensor(a)
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(a.value)))

    def bw(g):
        s = 1.0 / (1.0 + np.exp(-np.abs(a.value)))
        s = np.where(a.value >= 0.0, s, 1.0 - s)
        return (g * s,)

    return _make(out, (a,), bw)


def silu(a) -> Tensor:
    """x * sigmoid(x); smooth everywhere, used for trunk activations."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-np.abs(a.value)))
    s = np.where(a.value >= 0.0, s, 1.0 - s)
    out = a.value * s

    def bw(g):
        return (g * (s + a.value * s * (1.0 - s)),)

    return _make(out, (a,), bw)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), bw)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy() / count,)

    return _make(out, (a,), bw)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather rows (axis=0) or columns (axis=1); repeated indices allowed."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(a.value, idx, axis=axis)

    def bw(g):
        ga = np.zeros_like(a.value)
        if axis == 0:
            np.add.at(ga, idx, g)
        else:
            np.add.at(ga.swapaxes(0, axis), idx, np.asarray(g).swapaxes(0, axis))
        return (ga,)

    return _make(out, (a,), bw)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """out[s] = sum of rows of ``a`` whose segment id is s."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + a.value.shape[1:])
    np.add.at(out, ids, a.value)

    def bw(g):
        return (np.asarray(g)[ids],)

    return _make(out, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(np.asarray(g), splits, axis=axis))

    return _make(out, tuple(tensors), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.value.reshape(shape)

    def bw(g):
        return (np.asarray(g).reshape(a.value.shape),)

    return _make(out, (a,), bw)


def logsumexp(a) -> Tensor:
    """log(sum(exp(x))) over all entries of a 1D tensor, stable."""
    a = as_tensor(a)
    m = float(np.max(a.value))
    return add(log(tensor_sum(exp(sub(a, m)))), m)


def backward(t: Tensor) -> None:
    """Accumulate d(t)/d(leaf) into ``grad`` of every reachable Tensor.

    ``t`` must be scalar.  Gradients of leaves visited by earlier backward
    calls are overwritten only if the leaf appears in this tape.
    """
    if t.value.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {t.value.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    t.grad = np.ones_like(t.value)
    for node in reversed(order):
        if node._bw is None or node.grad is None:
            continue
        grads = node._bw(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g


# -- common loss building blocks ---------------------------------------


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Categorical cross-entropy of a 1D logit vector against a class index."""
    return sub(logsumexp(logits), take(logits, [int(target)]))


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean over entries of softplus(x) - x * y (y in {0, 1})."""
    targets = np.asarray(targets, dtype=np.float64)
    return tensor_mean(sub(softplus(logits), mul(logits, targets)))


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dimensions."""
    return mul(
        tensor_sum(sub(add(power(mu, 2.0), exp(logvar)), add(1.0, logvar))), 0.5
    )
