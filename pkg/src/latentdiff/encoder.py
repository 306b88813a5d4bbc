"""The latent space: a small contextual encoder (or an embedding-only
baseline), masked-token pretraining, special-token replacement, and
coordinate-wise normalization fitted on the training split.

The contextual encoder is pretrained with masked-token prediction and
frozen afterwards; the embedding mode is a frozen random table. In both
modes the latent at every PAD/BOS/EOS position is replaced by that
token's raw embedding before normalization, so special positions are
constant across contexts.

Attention masking is asymmetric on purpose: PAD keys are hidden during
masked pretraining (standard encoder training), but `encode` runs without
any attention mask because the downstream diffusion never uses one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, parameter
from .corpus import MASK, PAD, TokenSeq, Vocab
from .layers import Embedding, LayerNorm, Linear, TransformerLayer, pad_key_mask
from .optim import OptimizerState, adamw_step, zero_grads


@dataclass
class EncoderConfig:
    mode: str = "contextual"          # "contextual" or "embedding"
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    max_len: int = 32

    def __post_init__(self):
        if self.mode not in ("contextual", "embedding"):
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.mode == "contextual" and not 2 <= self.layers <= 4:
            raise ValueError("contextual encoder uses 2-4 layers")


class EncoderModel:
    def __init__(self, cfg: EncoderConfig, vocab_size: int, seed: int = 0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = np.random.default_rng(seed)
        self.embed = Embedding(rng, vocab_size, cfg.dim, std=1.0)
        self.frozen = False
        self.blocks: List[TransformerLayer] = []
        if cfg.mode == "contextual":
            self.pos = parameter(rng.normal(0.0, 0.02, (cfg.max_len, cfg.dim)))
            self.blocks = [TransformerLayer(rng, cfg.dim, cfg.heads, cfg.ff_mult)
                           for _ in range(cfg.layers)]
            self.final_ln = LayerNorm(cfg.dim)
            self.lm_head = Linear(rng, cfg.dim, vocab_size)

    def hidden(self, ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        """Contextual states [N, m, dim] for a batch of id rows."""
        h = self.embed(ids) + self.pos
        for block in self.blocks:
            h = block(h, mask=mask)
        return self.final_ln(h)

    def mlm_logits(self, ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        return self.lm_head(self.hidden(ids, mask=mask))

    def params(self) -> Dict[str, Tensor]:
        out = self.embed.params("embed")
        if self.cfg.mode == "contextual":
            out["pos"] = self.pos
            for i, block in enumerate(self.blocks):
                out.update(block.params(f"block{i}"))
            out.update(self.final_ln.params("final_ln"))
            out.update(self.lm_head.params("lm_head"))
        return out


@dataclass
class Normalizer:
    """Per-coordinate mean/std over the training-set latents (std floored)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, z: np.ndarray) -> np.ndarray:
        return (z - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def fit_normalizer(latents: np.ndarray, floor: float = 1e-6) -> Normalizer:
    """Statistics over every position of every sequence (specials included --
    the diffusion loss covers them too)."""
    z = np.asarray(latents, dtype=np.float64)
    if z.size == 0:
        raise ValueError("cannot fit a normalizer on an empty latent set")
    flat = z.reshape(-1, z.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.maximum(std, floor)
    return Normalizer(mean=mean, std=std)


def raw_latents(enc: EncoderModel, seqs: Sequence[TokenSeq],
                batch_size: int = 256) -> np.ndarray:
    """Pre-normalization latents with special positions replaced by embeddings.

    No attention mask is applied here; see the module docstring.
    """
    ids = np.stack([s.ids for s in seqs])
    special = np.stack([s.is_special for s in seqs])
    table = enc.embed.table.data
    out = np.empty(ids.shape + (enc.cfg.dim,), dtype=np.float64)
    with no_grad():
        if enc.cfg.mode == "embedding":
            out[:] = table[ids]
        else:
            for lo in range(0, ids.shape[0], batch_size):
                hi = lo + batch_size
                out[lo:hi] = enc.hidden(ids[lo:hi]).data
            out[special] = table[ids[special]]
    return out


def encode_batch(enc: EncoderModel, norm: Optional[Normalizer],
                 seqs: Sequence[TokenSeq]) -> np.ndarray:
    if norm is None:
        raise ValueError("normalizer not fitted; run fit_normalizer first")
    return norm.apply(raw_latents(enc, seqs))


def encode(seq: TokenSeq, enc: EncoderModel, norm: Optional[Normalizer]) -> np.ndarray:
    """Single-sequence latent row [m, dim]."""
    return encode_batch(enc, norm, [seq])[0]


# ---------------------------------------------------------------------------
# masked-token pretraining


@dataclass
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 64
    mask_rate: float = 0.15
    eval_every: int = 100
    patience: int = 5
    min_delta: float = 0.002
    lr: float = 1e-3
    warmup: int = 50


def _mask_batch(ids: np.ndarray, special: np.ndarray, rate: float,
                rng: np.random.Generator, mask_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """Replace `rate` of the non-special positions with MASK.

    Returns (masked ids, boolean mask of supervised positions); always at
    least one position per row.
    """
    pick = (rng.random(ids.shape) < rate) & ~special
    for r in range(ids.shape[0]):
        if not pick[r].any():
            cands = np.flatnonzero(~special[r])
            pick[r, cands[rng.integers(0, len(cands))]] = True
    masked = ids.copy()
    masked[pick] = mask_id
    return masked, pick


def masked_accuracy(enc: EncoderModel, ids: np.ndarray, special: np.ndarray,
                    masked: np.ndarray, pick: np.ndarray) -> float:
    with no_grad():
        logits = enc.mlm_logits(masked, mask=pad_key_mask(ids == PAD))
    pred = logits.data.argmax(axis=-1)
    return float((pred[pick] == ids[pick]).mean())


def pretrain_encoder(train_seqs: Sequence[TokenSeq], val_seqs: Sequence[TokenSeq],
                     cfg: EncoderConfig, seed: int, vocab: Vocab,
                     pretrain: Optional[PretrainConfig] = None
                     ) -> Tuple[EncoderModel, List[Tuple[int, float, float]]]:
    """Masked-token pretraining until validation accuracy plateaus.

    Returns the frozen encoder and a (step, loss, val_accuracy) history.
    """
    if cfg.mode != "contextual":
        raise ValueError("pretraining applies to the contextual mode only")
    pt = pretrain or PretrainConfig()
    enc = EncoderModel(cfg, vocab_size=len(vocab), seed=seed)
    params = enc.params()
    opt = OptimizerState(lr=pt.lr, warmup_steps=pt.warmup, ema_decay=0.0).init(params)
    rng = np.random.default_rng(seed + 1)

    ids = np.stack([s.ids for s in train_seqs])
    special = np.stack([s.is_special for s in train_seqs])
    val_ids = np.stack([s.ids for s in val_seqs])
    val_special = np.stack([s.is_special for s in val_seqs])
    val_masked, val_pick = _mask_batch(val_ids, val_special, pt.mask_rate,
                                       np.random.default_rng(seed + 2), MASK)

    history: List[Tuple[int, float, float]] = []
    best = -1.0
    stale = 0
    for step in range(1, pt.steps + 1):
        rows = rng.integers(0, ids.shape[0], size=min(pt.batch_size, ids.shape[0]))
        batch_ids = ids[rows]
        batch_special = special[rows]
        masked, pick = _mask_batch(batch_ids, batch_special, pt.mask_rate, rng, MASK)
        logits = enc.mlm_logits(masked, mask=pad_key_mask(batch_ids == PAD))
        loss = ad.cross_entropy(logits, batch_ids, weights=pick.astype(np.float64))
        if not np.isfinite(loss.data):
            raise ArithmeticError(f"masked pretraining diverged at step {step}")
        ad.backward(loss)
        adamw_step(params, opt)
        zero_grads(params)
        if step % pt.eval_every == 0 or step == pt.steps:
            acc = masked_accuracy(enc, val_ids, val_special, val_masked, val_pick)
            history.append((step, float(loss.data), acc))
            if acc > best + pt.min_delta:
                best = acc
                stale = 0
            else:
                stale += 1
                if stale >= pt.patience:
                    break
    enc.frozen = True
    return enc, history
