"""Reverse-mode autodiff over dense float64 numpy arrays.

A Tensor records its parents and a vjp closure; ``backward`` walks the
graph in reverse topological order.  Graphs are short-lived (one decode
step / one sample) and freed once backward has run.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels

ArrayLike = Union[np.ndarray, float, int, "Tensor"]


class ShapeMismatch(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjp", "requires_grad")

    def __init__(
        self,
        data: ArrayLike,
        parents: Sequence["Tensor"] = (),
        vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
        requires_grad: bool = False,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # operator sugar ----------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return add(as_tensor(other), mul(self, -1.0))

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x: ArrayLike) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out dimensions grad gained through numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, (a, b), vjp)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return Tensor(out_data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def vjp(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return Tensor(out_data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_row(a: Tensor, idx: int) -> Tensor:
    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return (ga,)

    return Tensor(a.data[idx], (a,), vjp)


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.size for p in parts]
    out_data = np.concatenate([p.data.ravel() for p in parts])

    def vjp(g):
        grads = []
        off = 0
        for p, n in zip(parts, sizes):
            grads.append(g[off : off + n].reshape(p.shape))
            off += n
        return grads

    return Tensor(out_data, parts, vjp)


def tsum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    out_data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, 1.0) * g,)
        return (np.expand_dims(g, axis) * np.ones_like(a.data),)

    return Tensor(out_data, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return Tensor(out_data, (a,), lambda g: (g * (1.0 - out_data**2),))


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)
    return Tensor(out_data, (a,), lambda g: (g * (a.data > 0.0),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return Tensor(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def softmax(a: Tensor) -> Tensor:
    """Softmax over all entries (shape preserved)."""
    z = a.data - a.data.max()
    e = np.exp(z)
    out_data = e / e.sum()

    def vjp(g):
        dot = float((g * out_data).sum())
        return (out_data * (g - dot),)

    return Tensor(out_data, (a,), vjp)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], fused for stability."""
    z = logits.data - logits.data.max()
    e = np.exp(z)
    p = e / e.sum()
    out_data = -(z[target] - np.log(e.sum()))

    def vjp(g):
        gl = p.copy()
        gl[target] -= 1.0
        return (g * gl,)

    return Tensor(out_data, (logits,), vjp)


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Sum of elementwise binary cross-entropies against sigmoid(logits)."""
    z = logits.data
    # log(1 + e^z) computed stably
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    out_data = (softplus - target * z).sum()

    def vjp(g):
        s = 1.0 / (1.0 + np.exp(-z))
        return (g * (s - target),)

    return Tensor(out_data, (logits,), vjp)


class DomainError(ValueError):
    pass


def kl_divergence(p: Union[Tensor, np.ndarray], q: Tensor) -> Tensor:
    """Sum p*log(p/q) with 0*log0 := 0; differentiable in both arguments."""
    p_t = p if isinstance(p, Tensor) else None
    pd = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    qd = q.data
    if pd.shape != qd.shape:
        raise ShapeMismatch(f"kl_divergence shapes {pd.shape} vs {qd.shape}")
    if np.any(pd < 0) or abs(pd.sum() - 1.0) > 1e-6:
        raise DomainError("first argument must be a probability distribution")
    support = pd > 0
    if np.any(qd[support] <= 0):
        raise DomainError("second argument must be positive where first is")
    ratio = np.ones_like(pd)
    ratio[support] = pd[support] / qd[support]
    out_data = float((pd[support] * np.log(ratio[support])).sum())

    def vjp(g):
        gq = np.where(support, -ratio, 0.0) * g
        if p_t is None:
            return (gq,)
        gp = np.where(support, np.log(ratio) + 1.0, 0.0) * g
        return gp, gq
    parents = (q,) if p_t is None else (p_t, q)
    return Tensor(out_data, parents, vjp)


# ---------------------------------------------------------------------------
# convolution and pooling (kernels dispatched to compiled or numpy backend)

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int = 1) -> Tensor:
    """'Same'-padded 2-D convolution; x is (C,H,W), w is (O,C,kh,kw)."""
    out_data = kernels.conv2d_forward(x.data, w.data, stride)
    if b is not None:
        out_data = out_data + b.data[:, None, None]

    def vjp(g):
        g = np.ascontiguousarray(g)
        grads = [
            kernels.conv2d_backward_input(g, w.data, x.data.shape, stride),
            kernels.conv2d_backward_weight(g, x.data, w.data.shape, stride),
        ]
        if b is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out_data, parents, vjp)


class ZeroDim(ValueError):
    pass


def _pool_edges(n: int, out: int) -> list[tuple[int, int]]:
    return [(n * i // out, max(n * (i + 1) // out, n * i // out + 1)) for i in range(out)]


def adaptive_avg_pool(a: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average over near-equal rectangular bins; output (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ZeroDim("pool output dims must be >= 1")
    h, w = a.shape
    rows = _pool_edges(h, out_h)
    cols = _pool_edges(w, out_w)
    out_data = np.empty((out_h, out_w))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out_data[i, j] = a.data[r0:r1, c0:c1].mean()

    def vjp(g):
        ga = np.zeros_like(a.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                ga[r0:r1, c0:c1] += g[i, j] / ((r1 - r0) * (c1 - c0))
        return (ga,)

    return Tensor(out_data, (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every reachable tensor
    with requires_grad; loss must be scalar."""
    if loss.data.ndim != 0:
        raise ShapeMismatch("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    for t in topo:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.vjp is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad and g is not None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
