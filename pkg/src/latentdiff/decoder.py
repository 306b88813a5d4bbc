"""Latent-to-token decoding: an MLP head, a contextual transformer head,
and a parameter-free nearest-embedding rounding baseline.

Learned decoders are trained on corrupted latents so that they stay robust
to the distribution mismatch between encoder outputs and latents produced
by the diffusion at generation time. The default corruption replaces z0
with a forward-process z_t at a small random t, using the same noise
schedule as the diffusion itself; the alternative adds plain Gaussian
noise. All training and decoding happens in the normalized latent space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, parameter
from .layers import LayerNorm, Linear, TransformerLayer
from .optim import OptimizerState, adamw_step, zero_grads
from .schedule import NoiseSchedule, forward_sample


@dataclass
class CorruptionSpec:
    mode: str = "zt"                  # "zt", "gauss" or "none"
    t_max: float = 0.15
    sigma: float = 0.0

    def __post_init__(self):
        if self.mode not in ("zt", "gauss", "none"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")
        if self.mode == "zt" and not 0.0 < self.t_max <= 1.0:
            raise ValueError("t_max must lie in (0, 1]")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")

    def tag(self) -> str:
        if self.mode == "zt":
            return f"zt{self.t_max:g}"
        if self.mode == "gauss":
            return f"gauss{self.sigma:g}"
        return "none"


def corrupt(z0: np.ndarray, spec: CorruptionSpec, rng: np.random.Generator,
            sched: NoiseSchedule) -> np.ndarray:
    """Corrupted copy of a latent batch (identity for mode "none")."""
    if spec.mode == "none":
        return z0
    eps = rng.standard_normal(z0.shape)
    if spec.mode == "gauss":
        return z0 + spec.sigma * eps
    t = rng.uniform(0.0, spec.t_max, size=z0.shape[0])
    return forward_sample(z0, t, eps, sched)


@dataclass
class DecoderConfig:
    variant: str = "transformer"      # "transformer", "mlp" or "rounding"
    dim: int = 64
    heads: int = 4
    layers: int = 3
    ff_mult: int = 4
    mlp_hidden: int = 256
    max_len: int = 32
    cross: bool = False

    def __post_init__(self):
        if self.variant not in ("transformer", "mlp", "rounding"):
            raise ValueError(f"unknown decoder variant {self.variant!r}")


class DecoderModel:
    """Per-position vocab logits from latents (or nearest-embedding lookup).

    The rounding variant carries the normalized embedding table instead of
    weights and is only meaningful for embedding-mode latent spaces.
    """

    def __init__(self, cfg: DecoderConfig, vocab_size: int, seed: int = 0,
                 embedding_table: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.table: Optional[np.ndarray] = None
        if cfg.variant == "rounding":
            if embedding_table is None:
                raise ValueError("rounding decoder needs the embedding table")
            self.table = np.asarray(embedding_table, dtype=np.float64)
            return
        rng = np.random.default_rng(seed)
        d = cfg.dim
        if cfg.variant == "mlp":
            self.lin1 = Linear(rng, d, cfg.mlp_hidden)
            self.lin2 = Linear(rng, cfg.mlp_hidden, vocab_size)
        else:
            self.in_proj = Linear(rng, d, d)
            self.pos = parameter(rng.normal(0.0, 0.02, (cfg.max_len, d)))
            self.blocks = [TransformerLayer(rng, d, cfg.heads, cfg.ff_mult,
                                            cross=cfg.cross)
                           for _ in range(cfg.layers)]
            self.final_ln = LayerNorm(d)
            self.out = Linear(rng, d, vocab_size)

    def logits(self, z, cond: Optional[Tensor] = None) -> Tensor:
        if self.cfg.variant == "rounding":
            raise ValueError("rounding decoder has no logits")
        x = z if isinstance(z, Tensor) else Tensor(z)
        if self.cfg.variant == "mlp":
            return self.lin2(ad.gelu(self.lin1(x)))
        h = self.in_proj(x) + self.pos
        for block in self.blocks:
            h = block(h, memory=cond)
        return self.out(self.final_ln(h))

    def params(self) -> Dict[str, Tensor]:
        if self.cfg.variant == "rounding":
            return {}
        if self.cfg.variant == "mlp":
            out = self.lin1.params("lin1")
            out.update(self.lin2.params("lin2"))
            return out
        out = self.in_proj.params("in_proj")
        out["pos"] = self.pos
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"block{i}"))
        out.update(self.final_ln.params("final_ln"))
        out.update(self.out.params("out"))
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter names do not match checkpoint: {sorted(missing)}")
        for name, p in params.items():
            p.data = arrays[name].astype(np.float64)


def decode_latent(z: np.ndarray, model: DecoderModel,
                  cond: Optional[np.ndarray] = None) -> np.ndarray:
    """Token ids [..., m] for a latent batch; ties break to the lowest id."""
    single = z.ndim == 2
    zb = z[None] if single else z
    if model.cfg.variant == "rounding":
        flat = zb.reshape(-1, zb.shape[-1])
        # squared L2 to every embedding row; argmin takes the first (lowest id)
        d2 = (flat ** 2).sum(-1, keepdims=True) \
            - 2.0 * flat @ model.table.T \
            + (model.table ** 2).sum(-1)[None, :]
        ids = d2.argmin(axis=-1).reshape(zb.shape[:-1])
    else:
        with no_grad():
            cond_t = Tensor(cond) if cond is not None else None
            ids = model.logits(zb, cond=cond_t).data.argmax(axis=-1)
    return ids[0] if single else ids


def token_accuracy(model: DecoderModel, z: np.ndarray, ids: np.ndarray,
                   cond: Optional[np.ndarray] = None) -> float:
    """Share of correctly decoded positions (special positions included)."""
    pred = decode_latent(z, model, cond=cond)
    return float((pred == ids).mean())


@dataclass
class DecoderTrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    warmup: int = 50
    eval_every: int = 100
    patience: int = 6
    min_delta: float = 1e-3


def train_decoder(latents: np.ndarray, ids: np.ndarray, spec: CorruptionSpec,
                  cfg: DecoderConfig, seed: int, sched: NoiseSchedule,
                  val_latents: np.ndarray, val_ids: np.ndarray,
                  vocab_size: int, train_cfg: Optional[DecoderTrainConfig] = None,
                  cond_memory: Optional[np.ndarray] = None,
                  val_cond_memory: Optional[np.ndarray] = None,
                  curve_path: Optional[Path] = None
                  ) -> Tuple[DecoderModel, List[Tuple[int, float, float]]]:
    """Cross-entropy training over every position on corrupted latents.

    Stops when validation token accuracy stops improving. Returns the
    model and a (step, loss, val_accuracy) history.
    """
    tc = train_cfg or DecoderTrainConfig()
    model = DecoderModel(cfg, vocab_size=vocab_size, seed=seed)
    params = model.params()
    opt = OptimizerState(lr=tc.lr, warmup_steps=tc.warmup, ema_decay=0.0).init(params)
    rng = np.random.default_rng(seed + 1)
    history: List[Tuple[int, float, float]] = []
    best = -1.0
    stale = 0
    for step in range(1, tc.steps + 1):
        rows = rng.integers(0, latents.shape[0], size=min(tc.batch_size, latents.shape[0]))
        z = corrupt(latents[rows], spec, rng, sched)
        cond_t = Tensor(cond_memory[rows]) if cond_memory is not None else None
        logits = model.logits(z, cond=cond_t)
        loss = ad.cross_entropy(logits, ids[rows])
        if not np.isfinite(loss.data):
            raise ArithmeticError(f"decoder training diverged at step {step}")
        ad.backward(loss)
        adamw_step(params, opt)
        zero_grads(params)
        if step % tc.eval_every == 0 or step == tc.steps:
            acc = token_accuracy(model, val_latents, val_ids, cond=val_cond_memory)
            history.append((step, float(loss.data), acc))
            if acc > best + tc.min_delta:
                best = acc
                stale = 0
            else:
                stale += 1
                if stale >= tc.patience:
                    break
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "val_accuracy"])
            for row in history:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
    return model, history
