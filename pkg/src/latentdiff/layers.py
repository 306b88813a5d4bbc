"""Transformer building blocks on top of the autodiff engine.

Pre-norm residual layers throughout: they train stably at the small widths
this project uses without any learning-rate tricks. Attention masks are
plain additive numpy arrays so masked pretraining and mask-free diffusion
share the same code path.
"""

from __future__ import annotations

import math
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter

INIT_STD = 0.02


class Linear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.d_in = d_in
        self.d_out = d_out
        self.w = parameter(rng.normal(0.0, INIT_STD, (d_in, d_out)))
        self.b = parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.d_in))
        out = flat @ self.w + self.b
        return out.reshape(lead + (self.d_out,))

    def params(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d: int):
        self.gain = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)

    def params(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Embedding:
    def __init__(self, rng: np.random.Generator, count: int, dim: int, std: float = 1.0):
        self.table = parameter(rng.normal(0.0, std, (count, dim)))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ad.embedding(self.table, ids)

    def params(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


class MultiHeadAttention:
    """Self- or cross-attention; `mask` is an additive array broadcastable
    to [batch, heads, query, key]."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        if d % heads != 0:
            raise ValueError(f"dim {d} not divisible by heads {heads}")
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def _split(self, x: Tensor, n: int, m: int) -> Tensor:
        return x.reshape((n, m, self.heads, self.dh)).transpose((0, 2, 1, 3))

    def __call__(self, x: Tensor, memory: Optional[Tensor] = None,
                 mask: Optional[np.ndarray] = None) -> Tensor:
        src = memory if memory is not None else x
        n, mq = x.shape[0], x.shape[1]
        mk = src.shape[1]
        q = self._split(self.wq(x), n, mq)
        k = self._split(self.wk(src), n, mk)
        v = self._split(self.wv(src), n, mk)
        scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(self.dh))
        if mask is not None:
            scores = scores + mask
        attn = ad.softmax(scores)
        ctx = (attn @ v).transpose((0, 2, 1, 3)).reshape((n, mq, self.d))
        return self.wo(ctx)

    def params(self, prefix: str) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        out.update(self.wq.params(f"{prefix}.wq"))
        out.update(self.wk.params(f"{prefix}.wk"))
        out.update(self.wv.params(f"{prefix}.wv"))
        out.update(self.wo.params(f"{prefix}.wo"))
        return out


class FeedForward:
    def __init__(self, rng: np.random.Generator, d: int, hidden: int):
        self.lin1 = Linear(rng, d, hidden)
        self.lin2 = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.gelu(self.lin1(x)))

    def params(self, prefix: str) -> Dict[str, Tensor]:
        out = self.lin1.params(f"{prefix}.lin1")
        out.update(self.lin2.params(f"{prefix}.lin2"))
        return out


class TransformerLayer:
    """Pre-norm encoder layer, optionally with a cross-attention block."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int,
                 ff_mult: int = 4, cross: bool = False):
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln1 = LayerNorm(d)
        self.ff = FeedForward(rng, d, ff_mult * d)
        self.ln2 = LayerNorm(d)
        self.cross = None
        self.ln_cross = None
        if cross:
            self.cross = MultiHeadAttention(rng, d, heads)
            self.ln_cross = LayerNorm(d)

    def __call__(self, h: Tensor, mask: Optional[np.ndarray] = None,
                 memory: Optional[Tensor] = None) -> Tensor:
        h = h + self.attn(self.ln1(h), mask=mask)
        if self.cross is not None and memory is not None:
            h = h + self.cross(self.ln_cross(h), memory=memory)
        h = h + self.ff(self.ln2(h))
        return h

    def params(self, prefix: str) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.ff.params(f"{prefix}.ff"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        if self.cross is not None:
            out.update(self.cross.params(f"{prefix}.cross"))
            out.update(self.ln_cross.params(f"{prefix}.ln_cross"))
        return out


def sinusoidal_features(t: np.ndarray, dim: int, scale: float = 1000.0) -> np.ndarray:
    """Sin/cos features of a continuous time value in [0, 1].

    Times are stretched by `scale` so the highest-frequency channels still
    resolve small steps near t=0.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * scale
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    feats = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if feats.shape[-1] < dim:
        feats = np.concatenate([feats, np.zeros((feats.shape[0], 1))], axis=-1)
    return feats


def pad_key_mask(pad_positions: np.ndarray) -> np.ndarray:
    """Additive attention mask hiding PAD keys.

    `pad_positions` is a boolean [batch, seq]; result broadcasts to
    [batch, heads, query, key].
    """
    return np.where(pad_positions[:, None, None, :], -1e9, 0.0)
