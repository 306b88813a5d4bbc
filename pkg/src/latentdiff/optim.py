"""AdamW with decoupled weight decay, global-norm clipping, linear warmup,
and an exponential-moving-average shadow of the parameters.

Reference defaults: betas (0.9, 0.980), weight decay 0.01, clip norm 1.0,
EMA decay 0.9999, 500 warmup steps, constant learning rate after warmup.
Desk-scale runs override these through the experiment config.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .autodiff import DTYPE, Tensor


@dataclass
class OptimizerState:
    """Moments, EMA shadow, and hyperparameters for one parameter set."""

    lr: float = 2e-4
    betas: tuple = (0.9, 0.980)
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    warmup_steps: int = 500
    ema_decay: float = 0.9999
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    ema: Dict[str, np.ndarray] = field(default_factory=dict)

    def init(self, params: Dict[str, Tensor]) -> "OptimizerState":
        for name, p in params.items():
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)
            self.ema[name] = p.data.copy()
        return self

    def effective_lr(self) -> float:
        if self.warmup_steps > 0 and self.step < self.warmup_steps:
            return self.lr * (self.step + 1) / self.warmup_steps
        return self.lr


def global_grad_norm(params: Dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def adamw_step(params: Dict[str, Tensor], state: OptimizerState) -> float:
    """One update over `params` using the gradients stored on each tensor.

    Order of operations: global-norm clip, warmed-up Adam update, decoupled
    weight decay, EMA shadow refresh. Returns the pre-clip gradient norm.
    Gradients are left untouched; call `zero_grads` before the next backward.
    """
    if not state.m:
        state.init(params)
    norm = global_grad_norm(params)
    scale = 1.0
    if state.clip_norm > 0 and norm > state.clip_norm:
        scale = state.clip_norm / (norm + 1e-12)
    lr = state.effective_lr()
    b1, b2 = state.betas
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        if name not in state.m:
            raise KeyError(f"optimizer state missing parameter {name!r}")
        if state.m[name].shape != p.data.shape:
            raise ValueError(
                f"moment shape {state.m[name].shape} does not match "
                f"parameter {name!r} shape {p.data.shape}"
            )
        g = (p.grad if p.grad is not None else np.zeros_like(p.data)) * scale
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        update = mhat / (np.sqrt(vhat) + state.eps)
        new = p.data - lr * update - lr * state.weight_decay * p.data
        p.data = new.astype(DTYPE)
        d = state.ema_decay
        state.ema[name] = d * state.ema[name] + (1.0 - d) * p.data
    state.step += 1
    return norm


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def ema_parameters(params: Dict[str, Tensor], state: OptimizerState) -> Dict[str, np.ndarray]:
    """Snapshot of the EMA shadow aligned with `params`."""
    return {name: state.ema[name].copy() for name in params}
