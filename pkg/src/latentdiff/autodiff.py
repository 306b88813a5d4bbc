"""Dense-tensor reverse-mode automatic differentiation.

The engine is define-by-run: every forward call builds a fresh graph of
`Tensor` nodes, and `backward` walks it once in reverse topological order.
All data is float64 numpy. The op set is exactly what the diffusion
pipeline needs (matmul, broadcast add/mul, softmax, layer norm, GELU,
embedding lookup, the two losses, and a stop-gradient boundary); anything
fancier is out of scope on purpose.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as _K

DTYPE = np.float64

_grad_enabled = True

# when True, every gradient produced during backward is checked for NaN/inf
nan_debug = False


class GradientError(RuntimeError):
    """Raised when backward detects a malformed root or non-finite gradients."""


class no_grad:
    """Context manager that suspends graph recording (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense float64 array plus an optional gradient accumulator.

    `_parents`/`_vjp` encode one edge bundle of the computation graph;
    they are empty for leaves and for anything created under `no_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._op: Optional[str] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; everything routes through the module-level ops
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(s))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def parameter(data, name: Optional[str] = None) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast during the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def vjp(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), vjp, "sub")


def neg(a) -> Tensor:
    a = _lift(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), vjp, "mul")


def power(a, p) -> Tensor:
    a = _lift(a)
    p = float(p)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp, "pow")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")
    out = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return (ga, gb)

    return _make(out, (a, b), vjp, "matmul")


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.data.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, (a,), lambda g: (g.transpose(inv),), "transpose")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.full(a.data.shape, g, dtype=DTYPE) if np.ndim(g) == 0
                    else np.broadcast_to(g, a.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """GELU, tanh approximation (smooth, cheap, exactly differentiable)."""
    a = _lift(a)
    x = a.data
    if _K.HAVE_NUMBA:
        flat = np.ascontiguousarray(x).reshape(-1)
        out_flat, t_flat = _K.gelu_fwd(flat)
        out = out_flat.reshape(x.shape)

        def vjp(g):
            gx = _K.gelu_bwd(flat, t_flat, np.ascontiguousarray(g).reshape(-1))
            return (gx.reshape(x.shape),)

        return _make(out, (a,), vjp, "gelu")
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    half_1pt = 0.5 * (1.0 + t)
    out = x * half_1pt

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (half_1pt + 0.5 * x * (1.0 - t * t) * du),)

    return _make(out, (a,), vjp, "gelu")


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _lift(a)
    x = a.data
    if _K.HAVE_NUMBA:
        flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
        out_flat = _K.softmax_fwd(flat)
        out = out_flat.reshape(x.shape)

        def vjp(g):
            gx = _K.softmax_bwd(
                np.ascontiguousarray(g).reshape(-1, x.shape[-1]), out_flat)
            return (gx.reshape(x.shape),)

        return _make(out, (a,), vjp, "softmax")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - inner) * out,)

    return _make(out, (a,), vjp, "softmax")


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain/bias."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    x = a.data
    if _K.HAVE_NUMBA and gain.data.ndim == 1:
        d = x.shape[-1]
        flat = np.ascontiguousarray(x).reshape(-1, d)
        out_flat, xhat, inv = _K.layer_norm_fwd(flat, gain.data, bias.data, eps)
        out = out_flat.reshape(x.shape)

        def vjp(g):
            gflat = np.ascontiguousarray(g).reshape(-1, d)
            gx, ggain, gbias = _K.layer_norm_bwd(gflat, xhat, inv, gain.data,
                                                 a.requires_grad)
            return (gx.reshape(x.shape) if a.requires_grad else None,
                    ggain if gain.requires_grad else None,
                    gbias if bias.requires_grad else None)

        return _make(out, (a, gain, bias), vjp, "layer_norm")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        ga = gg = gb = None
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            ga = inv * (dxhat - m1 - xhat * m2)
        if gain.requires_grad:
            gg = _unbroadcast(g * xhat, gain.data.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.data.shape)
        return (ga, gg, gb)

    return _make(out, (a, gain, bias), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# lookup and losses


def embedding(table, ids) -> Tensor:
    """Row lookup `table[ids]`; backward scatter-adds into the table."""
    table = _lift(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("embedding ids must be integers")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _make(out, (table,), vjp, "embedding")


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean token cross-entropy from raw logits.

    `logits` is [..., V], `targets` integer ids of the matching leading
    shape, `weights` an optional per-position weighting (zeros drop a
    position entirely); result is the weighted mean negative log-likelihood.
    """
    logits = _lift(logits)
    vocab = logits.data.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tgt = np.asarray(targets).reshape(-1)
    if tgt.shape[0] != flat.shape[0]:
        raise ValueError("targets shape does not match logits")
    if weights is None:
        w = np.ones(flat.shape[0], dtype=DTYPE)
    else:
        w = np.asarray(weights, dtype=DTYPE).reshape(-1)
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("cross_entropy needs positive total weight")
    mx = flat.max(axis=-1, keepdims=True)
    lse = mx + np.log(np.exp(flat - mx).sum(axis=-1, keepdims=True))
    logp = flat - lse
    nll = -logp[np.arange(flat.shape[0]), tgt]
    out = (w * nll).sum() / wsum

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(flat.shape[0]), tgt] -= 1.0
        p *= (w / wsum)[:, None] * g
        return (p.reshape(logits.data.shape),)

    return _make(np.asarray(out), (logits,), vjp, "cross_entropy")


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over every entry."""
    return tmean(power(sub(pred, target), 2.0))


def stop_gradient(a) -> Tensor:
    """Identity in the forward pass; the backward pass never crosses it."""
    a = _lift(a)
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# backward


def _toposort(root: Tensor) -> list:
    order: list = []
    seen = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of `root` into every reachable requires_grad leaf.

    The root must be scalar. Raises `GradientError` on a non-finite root or
    if any leaf gradient comes out non-finite (with `nan_debug`, every
    intermediate gradient is checked as soon as it is produced).
    """
    if root.data.size != 1:
        raise GradientError(f"backward root must be scalar, got shape {root.data.shape}")
    if not np.isfinite(root.data).all():
        raise GradientError("backward root is not finite")
    if not root.requires_grad:
        return
    order = _toposort(root)
    root.grad = np.ones_like(root.data)
    leaves = []
    for node in reversed(order):
        if node._vjp is None:
            leaves.append(node)
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            if nan_debug and not np.isfinite(g).all():
                raise GradientError(
                    f"non-finite gradient flowing from op {node._op!r} "
                    f"into {p.name or '<unnamed>'}"
                )
            p.grad = g if p.grad is None else p.grad + g
    for leaf in leaves:
        if leaf.grad is not None and not np.isfinite(leaf.grad).all():
            raise GradientError(
                f"non-finite gradient accumulated in leaf {leaf.name or '<unnamed>'}"
            )
