"""Dense float64 tensors with reverse-mode gradients.

Small tape-based engine sized for the encoder/decoder in this package:
tensors are contiguous float64 arrays of at most 3 dimensions, every
primitive records a backward closure, and ``Tensor.backward`` runs one
topologically ordered sweep that accumulates exact analytic gradients
into the ``grad`` buffers of the inputs.

``grad_check`` is the correctness contract: central finite differences
against the analytic gradient, coordinate by coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_NDIM = 3


class ShapeMismatchError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


def _shape_error(op: str, *shapes) -> ShapeMismatchError:
    return ShapeMismatchError(f"{op}: incompatible shapes {list(shapes)}")


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_NDIM:
            raise ShapeMismatchError(f"tensor rank {arr.ndim} exceeds {MAX_NDIM}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into all parents.

        Visits each recorded node exactly once in reverse topological
        order.  A non-scalar root requires an explicit ``seed`` gradient.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() on non-scalar output requires a seed")
            seed = np.ones_like(self.data)
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
        self._ensure_grad()
        self.grad = self.grad + np.asarray(seed, dtype=np.float64).reshape(self.shape)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None, bound: float | None = None,
              shape=None) -> Tensor:
    """Trainable tensor; with ``rng`` and ``bound`` draws uniform in [-bound, bound]."""
    if rng is not None:
        if bound is None or shape is None:
            raise ValueError("parameter(): rng requires bound and shape")
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad or p._parents)
        out._backward = backward
    return out


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    out = _make(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._ensure_grad()
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.requires_grad:
            b._ensure_grad()
            b.grad += _unbroadcast(out.grad, b.shape)

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_error("subtract", a.shape, b.shape) from None
    out = _make(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._ensure_grad()
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.requires_grad:
            b._ensure_grad()
            b.grad += _unbroadcast(-out.grad, b.shape)

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("multiply", a.shape, b.shape) from None
    out = _make(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._ensure_grad()
            a.grad += _unbroadcast(out.grad * b.data, a.shape)
        if b.requires_grad:
            b._ensure_grad()
            b.grad += _unbroadcast(out.grad * a.data, b.shape)

    out._backward = backward if out.requires_grad else None
    return out


hadamard = mul


def matmul(a, b) -> Tensor:
    """Matrix product; supports (m,k)@(k,n), (B,m,k)@(k,n) and (B,m,k)@(B,k,n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise _shape_error("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise _shape_error("matmul", a.shape, b.shape) from None
    out = _make(data, (a, b), None)

    def backward():
        g = out.grad
        if a.requires_grad:
            a._ensure_grad()
            a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            b._ensure_grad()
            b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    out._backward = backward if out.requires_grad else None
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = _make(np.maximum(x.data, 0.0), (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            x.grad += out.grad * (x.data > 0.0)

    out._backward = backward if out.requires_grad else None
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # stable logistic: exp of a non-positive argument on both branches
    pos = x.data >= 0
    z = np.empty_like(x.data)
    z[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    z[~pos] = ez / (1.0 + ez)
    out = _make(z, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            x.grad += out.grad * z * (1.0 - z)

    out._backward = backward if out.requires_grad else None
    return out


def logsigmoid(x) -> Tensor:
    """log(sigmoid(x)) computed as -log1p(exp(-x)) without overflow."""
    x = as_tensor(x)
    data = -np.logaddexp(0.0, -x.data)
    out = _make(data, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            # d/dx log sigma(x) = sigma(-x)
            x.grad += out.grad * np.exp(-np.logaddexp(0.0, x.data))

    out._backward = backward if out.requires_grad else None
    return out


# -- reductions -------------------------------------------------------------

def tsum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis)
    out = _make(np.asarray(data), (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            if axis is None:
                x.grad += out.grad * np.ones_like(x.data)
            else:
                x.grad += np.expand_dims(out.grad, axis)

    out._backward = backward if out.requires_grad else None
    return out


def tmean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    data = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.data.shape[axis]
    out = _make(np.asarray(data), (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            if axis is None:
                x.grad += (out.grad / n) * np.ones_like(x.data)
            else:
                x.grad += np.expand_dims(out.grad, axis) / n

    out._backward = backward if out.requires_grad else None
    return out


def l1_norm(x, axis: int | None = None) -> Tensor:
    """Sum of absolute values; subgradient 0 at exactly-zero coordinates."""
    x = as_tensor(x)
    data = np.abs(x.data).sum(axis=axis)
    out = _make(np.asarray(data), (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            sign = np.sign(x.data)  # sign(0) == 0
            if axis is None:
                x.grad += out.grad * sign
            else:
                x.grad += np.expand_dims(out.grad, axis) * sign

    out._backward = backward if out.requires_grad else None
    return out


# -- shape ops --------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)
    out = _make(data, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            x.grad += out.grad.reshape(x.shape)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _make(data, tuple(tensors), None)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = np.moveaxis(out.grad, axis, 0)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._ensure_grad()
                t.grad += np.moveaxis(g[lo:hi], 0, axis)

    out._backward = backward if out.requires_grad else None
    return out


def embedding_lookup(table, idx) -> Tensor:
    """Gather rows ``table[idx]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise _shape_error("embedding_lookup", table.shape)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim > MAX_NDIM - 1:
        raise _shape_error("embedding_lookup(index)", idx.shape)
    data = table.data[idx]
    out = _make(data, (table,), None)

    def backward():
        if table.requires_grad:
            table._ensure_grad()
            np.add.at(table.grad, idx.reshape(-1),
                      out.grad.reshape(-1, table.shape[1]))

    out._backward = backward if out.requires_grad else None
    return out


# -- normalization and attention -------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            g = out.grad
            x.grad += y * (g - (g * y).sum(axis=axis, keepdims=True))

    out._backward = backward if out.requires_grad else None
    return out


def masked_softmax(x, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``.

    Masked positions get exactly 0; rows with no unmasked entry come out
    all-zero (the caller treats that as "no attention").
    """
    x = as_tensor(x)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg = np.where(m, x.data, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(x.data - mx), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)
    out = _make(y, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            g = out.grad
            x.grad += y * (g - (g * y).sum(axis=-1, keepdims=True))

    out._backward = backward if out.requires_grad else None
    return out


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = _make(y, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            g = out.grad
            x.grad += g - np.exp(y) * g.sum(axis=axis, keepdims=True)

    out._backward = backward if out.requires_grad else None
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply learned scale/shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise _shape_error("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(xhat * gain.data + bias.data, (x, gain, bias), None)

    def backward():
        g = out.grad
        if gain.requires_grad:
            gain._ensure_grad()
            gain.grad += _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            bias._ensure_grad()
            bias.grad += _unbroadcast(g, bias.shape)
        if x.requires_grad:
            x._ensure_grad()
            gx = g * gain.data
            x.grad += inv * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True))

    out._backward = backward if out.requires_grad else None
    return out


def dropout(x, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def scaled_dot_attention(q, k, v, mask=None, *, dropout_rate: float = 0.0,
                         rng: np.random.Generator | None = None,
                         training: bool = False) -> Tensor:
    """softmax(q k^T / sqrt(d)) v with optional key mask and weight dropout.

    ``q``: (B, m, d), ``k``/``v``: (B, K, d), ``mask``: (B, K) booleans
    marking real (non-padded) keys.  An all-masked row yields a zero
    output row rather than NaN.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-2] != k.shape[-2]:
        raise _shape_error("scaled_dot_attention", q.shape, k.shape, v.shape)
    logits = mul(matmul(q, _swap_last(k)), 1.0 / math.sqrt(d))
    if mask is None:
        attn = softmax(logits, axis=-1)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.ndim == logits.ndim - 1:
            m = np.broadcast_to(m[:, None, :], logits.shape)
        attn = masked_softmax(logits, m)
    if dropout_rate > 0.0 and training:
        if rng is None:
            raise ValueError("attention dropout requires an rng")
        attn = dropout(attn, dropout_rate, rng, training)
    return matmul(attn, v)


def _swap_last(x: Tensor) -> Tensor:
    data = np.swapaxes(x.data, -1, -2)
    out = _make(data, (x,), None)

    def backward():
        if x.requires_grad:
            x._ensure_grad()
            x.grad += np.swapaxes(out.grad, -1, -2)

    out._backward = backward if out.requires_grad else None
    return out


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of a finite-difference sweep over every input coordinate.

    A coordinate passes if |analytic - fd| < abs_floor, or if the error
    relative to max(|analytic|, |fd|) stays below tol.  ``max_rel_error``
    is 0 for coordinates absorbed by the absolute floor, so
    ``max_rel_error < tol`` iff the check passed.
    """

    max_rel_error: float = 0.0
    max_abs_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(f, inputs, eps: float = 1e-5, tol: float = 1e-4,
               abs_floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(*inputs)`` to central differences.

    ``inputs`` are arrays; each is wrapped as a trainable tensor and every
    coordinate is perturbed by +/- eps.  ``f`` must rebuild its graph on
    each call (a plain closure over the given tensors does).
    """
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True)
               for x in inputs]
    out = f(*tensors)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued computation")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    report = GradCheckReport()
    for i, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = f(*tensors).data.item()
            flat[j] = orig - eps
            f_minus = f(*tensors).data.item()
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[i].reshape(-1)[j]
            err = abs(a - fd)
            report.max_abs_error = max(report.max_abs_error, err)
            if err < abs_floor:
                continue
            rel = err / max(abs(a), abs(fd))
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel >= tol:
                report.failures.append((i, j, float(a), float(fd)))
    return report
