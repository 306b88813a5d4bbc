"""The denoising model and its training procedure.

The model predicts the clean latent from (z_t, t, previous estimate,
optional condition memory). Timestep information and the previous-estimate
input are injected identically: each layer adds a learned linear projection
of the sinusoidal time features and of the estimate to its hidden states.
No attention mask is ever applied over positions.

Training draws t ~ U[0,1] and eps ~ N(0,I) per example. With probability
`p_plain` the loss is taken on the single-pass prediction made with a zero
estimate; otherwise that first prediction is detached (stop-gradient) and
fed back for a second pass, and the loss is taken on the second prediction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, parameter, stop_gradient
from .layers import Embedding, LayerNorm, Linear, TransformerLayer, sinusoidal_features
from .optim import OptimizerState, adamw_step, zero_grads
from .schedule import NoiseSchedule, forward_sample


@dataclass
class DenoiserConfig:
    layers: int = 4
    dim: int = 64
    heads: int = 4
    ff_mult: int = 4
    max_len: int = 32
    cross: bool = False               # enable cross-attention on a condition


class DenoiserModel:
    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.dim
        self.in_proj = Linear(rng, d, d)
        self.pos = parameter(rng.normal(0.0, 0.02, (cfg.max_len, d)))
        self.blocks = [TransformerLayer(rng, d, cfg.heads, cfg.ff_mult, cross=cfg.cross)
                       for _ in range(cfg.layers)]
        self.t_projs = [Linear(rng, d, d) for _ in range(cfg.layers)]
        self.sc_projs = [Linear(rng, d, d) for _ in range(cfg.layers)]
        self.final_ln = LayerNorm(d)
        self.out_proj = Linear(rng, d, d)

    def __call__(self, z_t, t, sc=None, cond: Optional[Tensor] = None) -> Tensor:
        """Full-sequence prediction of the clean latent.

        `z_t` is [N, m, d]; `t` a scalar or per-example array; `sc` the
        previous estimate (zero latent when None). Cross-attention runs
        iff `cond` is given.
        """
        z = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        n, m, d = z.shape
        if sc is None:
            sc_t = Tensor(np.zeros((n, m, d)))
        else:
            sc_t = sc if isinstance(sc, Tensor) else Tensor(sc)
            if sc_t.shape != z.shape:
                raise ValueError(f"sc shape {sc_t.shape} != z_t shape {z.shape}")
        t_arr = np.asarray(t, dtype=np.float64)
        t_check = np.atleast_1d(t_arr)
        if np.any(t_check < 0.0) or np.any(t_check > 1.0):
            raise ValueError(f"t outside [0, 1]: {t!r}")
        if t_arr.ndim == 0:
            t_arr = np.full(n, float(t_arr))
        tfeat = Tensor(sinusoidal_features(t_arr, d))
        h = self.in_proj(z) + self.pos
        for block, t_proj, sc_proj in zip(self.blocks, self.t_projs, self.sc_projs):
            h = h + t_proj(tfeat).reshape((n, 1, d)) + sc_proj(sc_t)
            h = block(h, mask=None, memory=cond)
        return self.out_proj(self.final_ln(h))

    def params(self) -> Dict[str, Tensor]:
        out = self.in_proj.params("in_proj")
        out["pos"] = self.pos
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"block{i}"))
            out.update(self.t_projs[i].params(f"t_proj{i}"))
            out.update(self.sc_projs[i].params(f"sc_proj{i}"))
        out.update(self.final_ln.params("final_ln"))
        out.update(self.out_proj.params("out_proj"))
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter names do not match checkpoint: {sorted(missing)}")
        for name, p in params.items():
            if p.data.shape != arrays[name].shape:
                raise ValueError(f"shape mismatch for {name!r}")
            p.data = arrays[name].astype(np.float64)


class CondEncoderModel:
    """Small trainable encoder turning a source id batch into condition memory."""

    def __init__(self, dim: int, heads: int, layers: int, max_len: int,
                 vocab_size: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.embed = Embedding(rng, vocab_size, dim, std=1.0)
        self.pos = parameter(rng.normal(0.0, 0.02, (max_len, dim)))
        self.blocks = [TransformerLayer(rng, dim, heads) for _ in range(layers)]
        self.final_ln = LayerNorm(dim)

    def __call__(self, ids: np.ndarray) -> Tensor:
        h = self.embed(ids) + self.pos
        for block in self.blocks:
            h = block(h)
        return self.final_ln(h)

    def params(self) -> Dict[str, Tensor]:
        out = self.embed.params("cond.embed")
        out["cond.pos"] = self.pos
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"cond.block{i}"))
        out.update(self.final_ln.params("cond.final_ln"))
        return out


def denoise(model: DenoiserModel, z_t: np.ndarray, t, sc: Optional[np.ndarray] = None,
            cond: Optional[np.ndarray] = None) -> np.ndarray:
    """Graph-free prediction for sampling and analysis."""
    with no_grad():
        cond_t = Tensor(cond) if cond is not None else None
        return model(z_t, t, sc, cond_t).data


@dataclass
class TrainStepResult:
    loss: float
    used_self_cond: bool
    pred_magnitude: float
    grad_norm: float


def train_step(model: DenoiserModel, params: Dict[str, Tensor], opt: OptimizerState,
               z0: np.ndarray, sched: NoiseSchedule, rng: np.random.Generator,
               p_plain: float = 0.5,
               cond_ids: Optional[np.ndarray] = None,
               cond_enc: Optional[CondEncoderModel] = None) -> TrainStepResult:
    """One optimization step of the denoising objective."""
    n = z0.shape[0]
    t = rng.random(n)
    eps = rng.standard_normal(z0.shape)
    z_t = forward_sample(z0, t, eps, sched)
    plain = bool(rng.random() < p_plain)
    memory = cond_enc(cond_ids) if cond_enc is not None and cond_ids is not None else None
    if plain:
        pred = model(z_t, t, None, memory)
    else:
        with no_grad():
            first = model(z_t, t, None, memory)
        pred = model(z_t, t, stop_gradient(first), memory)
    loss = ad.mse_loss(pred, Tensor(z0))
    if not np.isfinite(loss.data):
        raise ArithmeticError(
            f"NaN loss in diffusion training; offending t values: {np.sort(t)!r}")
    ad.backward(loss)
    norm = adamw_step(params, opt)
    zero_grads(params)
    return TrainStepResult(
        loss=float(loss.data),
        used_self_cond=not plain,
        pred_magnitude=float(np.mean(pred.data ** 2)),
        grad_norm=norm,
    )


@dataclass
class DiffusionTrainConfig:
    steps: int = 100_000
    batch_size: int = 512
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.9, 0.980)
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    warmup: int = 500
    ema_decay: float = 0.9999
    p_plain: float = 0.5
    log_every: int = 50


def train_diffusion(model: DenoiserModel, latents: np.ndarray,
                    cfg: DiffusionTrainConfig, sched: NoiseSchedule, seed: int,
                    cond_ids: Optional[np.ndarray] = None,
                    cond_enc: Optional[CondEncoderModel] = None,
                    curve_path: Optional[Path] = None
                    ) -> Tuple[OptimizerState, List[Tuple[int, float, int, float]]]:
    """Train on a fixed latent set; returns optimizer state and the curve.

    Curve rows are (step, mean loss since last row, self-cond steps since
    last row, mean prediction magnitude).
    """
    params = model.params()
    if cond_enc is not None:
        params = {**params, **cond_enc.params()}
    opt = OptimizerState(lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay,
                         clip_norm=cfg.clip_norm, warmup_steps=cfg.warmup,
                         ema_decay=cfg.ema_decay).init(params)
    rng = np.random.default_rng(seed)
    n = latents.shape[0]
    curve: List[Tuple[int, float, int, float]] = []
    acc_loss: List[float] = []
    acc_sc = 0
    acc_mag: List[float] = []
    for step in range(1, cfg.steps + 1):
        rows = rng.integers(0, n, size=min(cfg.batch_size, n))
        batch_cond = cond_ids[rows] if cond_ids is not None else None
        res = train_step(model, params, opt, latents[rows], sched, rng,
                         p_plain=cfg.p_plain, cond_ids=batch_cond, cond_enc=cond_enc)
        acc_loss.append(res.loss)
        acc_sc += int(res.used_self_cond)
        acc_mag.append(res.pred_magnitude)
        if step % cfg.log_every == 0 or step == cfg.steps:
            curve.append((step, float(np.mean(acc_loss)), acc_sc,
                          float(np.mean(acc_mag))))
            acc_loss, acc_sc, acc_mag = [], 0, []
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "self_cond_steps", "pred_magnitude"])
            for row in curve:
                writer.writerow([row[0], repr(row[1]), row[2], repr(row[3])])
    return opt, curve


def prediction_magnitude_reference(model: DenoiserModel, latents: np.ndarray,
                                   sched: NoiseSchedule, t_values: Sequence[float],
                                   seed: int, batch: int = 128) -> Dict[float, float]:
    """Mean squared value of single-pass (zero estimate) predictions on
    forward-process latents, per timestep; the training-side magnitude
    that generation trajectories are compared against."""
    rng = np.random.default_rng(seed)
    n = min(batch, latents.shape[0])
    rows = rng.integers(0, latents.shape[0], size=n)
    z0 = latents[rows]
    out: Dict[float, float] = {}
    for t in t_values:
        eps = rng.standard_normal(z0.shape)
        z_t = forward_sample(z0, float(t), eps, sched)
        pred = denoise(model, z_t, float(t), None)
        out[float(t)] = float(np.mean(pred ** 2))
    return out
