"""Reverse-mode autograd on dense float64 arrays.

A Tensor wraps a NumPy array plus an optional gradient buffer. Ops record
a closure that routes the output gradient back to the inputs; backward()
walks the graph in reverse topological order. The op set is exactly what
the group-scoring model and its losses need, not a general framework.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, NumericalError
from .backend import kernels


_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops built inside record no graph (forward only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of NumPy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        if self.requires_grad and backward_fn is not None:
            self._parents = tuple(p for p in parents if p.requires_grad)
            self._backward_fn = backward_fn
        else:
            self._parents = ()
            self._backward_fn = None

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            # own a dense copy; incoming grads may be views or reused buffers
            self.grad = np.array(grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def check_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite values in {what}")
        return self

    def backward(self):
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar output")
        self.check_finite("loss")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data
        a, b = self, other

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor(out_data, a.requires_grad or b.requires_grad, (a, b), bwd)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor(-a.data, a.requires_grad, (a,), bwd)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        out_data = a.data * b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor(out_data, a.requires_grad or b.requires_grad, (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        out_data = a.data / b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor(out_data, a.requires_grad or b.requires_grad, (a, b), bwd)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
            raise DimensionError(
                f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
        out_data = np.matmul(a.data, b.data)

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                                           a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                                           b.data.shape))

        return Tensor(out_data, a.requires_grad or b.requires_grad, (a, b), bwd)

    __matmul__ = matmul

    # -- elementwise nonlinearities ----------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def bwd(g):
            a._accumulate(g * mask)

        return Tensor(a.data * mask, a.requires_grad, (a,), bwd)

    def sigmoid(self):
        a = self
        out_data = 1.0 / (1.0 + np.exp(-a.data))

        def bwd(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor(out_data, a.requires_grad, (a,), bwd)

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            a._accumulate(g * out_data)

        return Tensor(out_data, a.requires_grad, (a,), bwd)

    def log(self):
        a = self

        def bwd(g):
            a._accumulate(g / a.data)

        return Tensor(np.log(a.data), a.requires_grad, (a,), bwd)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            a._accumulate(g * 0.5 / out_data)

        return Tensor(out_data, a.requires_grad, (a,), bwd)

    # -- reductions / reshaping -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

        return Tensor(out_data, a.requires_grad, (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        a = self
        old = a.data.shape

        def bwd(g):
            a._accumulate(g.reshape(old))

        return Tensor(a.data.reshape(*shape), a.requires_grad, (a,), bwd)

    def slice0(self, lo: int, hi: int):
        """Contiguous row slice along axis 0."""
        a = self

        def bwd(g):
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            a._accumulate(full)

        return Tensor(a.data[lo:hi], a.requires_grad, (a,), bwd)

    def transpose(self, axes):
        a = self
        inv = np.argsort(axes)

        def bwd(g):
            a._accumulate(g.transpose(inv))

        return Tensor(a.data.transpose(axes), a.requires_grad, (a,), bwd)


# -- free functions ---------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(tensors)
    sizes = [t.data.shape[axis] for t in parts]
    out_data = np.concatenate([t.data for t in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    req = any(t.requires_grad for t in parts)
    return Tensor(out_data, req, parts, bwd)


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather from a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise DimensionError("take_rows expects a 2-D table")
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DimensionError("row index out of range")
    out_data = table.data[idx]

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))

    return Tensor(out_data, table.requires_grad, (table,), bwd)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w (+ b) over the last axis, computed as one 2-D BLAS product."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(
            f"linear inner dimensions disagree: {x.data.shape} x {w.data.shape}")
    shape = x.data.shape
    x2d = x.data.reshape(-1, shape[-1])
    out = x2d @ w.data
    if b is not None:
        out += b.data
    out_shape = shape[:-1] + (w.data.shape[1],)

    def bwd(g):
        g2d = g.reshape(-1, w.data.shape[1])
        if x.requires_grad:
            x._accumulate((g2d @ w.data.T).reshape(shape))
        if w.requires_grad:
            w._accumulate(x2d.T @ g2d)
        if b is not None and b.requires_grad:
            b._accumulate(g2d.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    req = any(p.requires_grad for p in parents)
    return Tensor(out.reshape(out_shape), req, parents, bwd)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, key_bias: np.ndarray,
                     scale: float) -> Tensor:
    """Fused softmax(q.k^T * scale + key_bias).v over (B, h, T, kdim) stacks.

    key_bias is a constant (B, T) array, 0 at real keys and a large negative
    at masked keys so their weights underflow to exactly zero.
    """
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    bias = np.ascontiguousarray(key_bias)
    ctx, probs = kernels.attn_fwd(qd, kd, vd, bias, scale)

    def bwd(g):
        dq, dk, dv = kernels.attn_bwd(np.ascontiguousarray(g), probs, qd, kd, vd, scale)
        if q.requires_grad:
            q._accumulate(dq)
        if k.requires_grad:
            k._accumulate(dk)
        if v.requires_grad:
            v._accumulate(dv)

    req = q.requires_grad or k.requires_grad or v.requires_grad
    return Tensor(np.asarray(ctx), req, (q, k, v), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    x.check_finite("softmax input")
    shape = x.data.shape
    x2d = np.ascontiguousarray(x.data.reshape(-1, shape[-1]))
    y2d = kernels.softmax_rows_fwd(x2d)
    a = x

    def bwd(g):
        dy2d = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        a._accumulate(kernels.softmax_rows_bwd(y2d, dy2d).reshape(shape))

    return Tensor(np.asarray(y2d).reshape(shape), a.requires_grad, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance uses denominator d; eps sits inside the square root.
    """
    shape = x.data.shape
    d = shape[-1]
    if d == 0:
        raise DimensionError("layer_norm over an empty axis")
    x2d = np.ascontiguousarray(x.data.reshape(-1, d))
    y2d, mean, rstd = kernels.layer_norm_fwd(
        x2d, np.ascontiguousarray(gain.data), np.ascontiguousarray(bias.data), eps)

    def bwd(g):
        dy2d = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgain, dbias = kernels.layer_norm_bwd(
            dy2d, x2d, np.ascontiguousarray(gain.data), mean, rstd)
        if x.requires_grad:
            x._accumulate(np.asarray(dx).reshape(shape))
        if gain.requires_grad:
            gain._accumulate(np.asarray(dgain))
        if bias.requires_grad:
            bias._accumulate(np.asarray(dbias))

    req = x.requires_grad or gain.requires_grad or bias.requires_grad
    return Tensor(np.asarray(y2d).reshape(shape), req, (x, gain, bias), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)
