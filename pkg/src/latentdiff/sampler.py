"""Generation: deterministic Euler-solver denoising from pure noise with
inference-time self-conditioning, plus minimum-risk candidate selection.

The trajectory runs over a uniform descending grid from t=1 to t=0 with T
points; the model is evaluated at every grid point (the t=0 evaluation is
the final prediction) and each Euler update re-noises the current clean
estimate toward the next grid time with the implied noise direction.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import math

import numpy as np

from .corpus import Vocab, ids_to_text
from .decoder import DecoderModel, decode_latent
from .denoiser import DenoiserModel, denoise
from .schedule import NoiseSchedule, alpha


@dataclass
class SamplerConfig:
    steps: int = 50
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    seed: int = 0
    use_self_cond: bool = True
    mbr_k: int = 0                    # 0 = plain single sample per slot
    n_samples: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def grid(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([1.0])
        return np.linspace(1.0, 0.0, self.steps)


@dataclass
class TrajectoryTrace:
    """Per-step (t, prediction magnitude); optionally the predictions too."""

    times: List[float] = field(default_factory=list)
    magnitudes: List[float] = field(default_factory=list)
    latents: Optional[List[np.ndarray]] = None

    def record(self, t: float, pred: np.ndarray, keep_latent: bool) -> None:
        self.times.append(float(t))
        self.magnitudes.append(float(np.mean(pred ** 2)))
        if keep_latent:
            if self.latents is None:
                self.latents = []
            self.latents.append(pred.copy())

    def __len__(self) -> int:
        return len(self.times)


def euler_step(z_t: np.ndarray, z0_hat: np.ndarray, t: float, s: float,
               sched: NoiseSchedule) -> np.ndarray:
    """Deterministic update from time t to time s < t.

    Solves for the noise direction implied by the prediction and re-applies
    the forward map at s; at s=0 the prediction itself is returned.
    """
    if not 0.0 <= s < t <= 1.0:
        raise ValueError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    if s == 0.0:
        return z0_hat
    a_t = alpha(t, sched)
    a_s = alpha(s, sched)
    eps_hat = (z_t - math.sqrt(a_t) * z0_hat) / math.sqrt(1.0 - a_t)
    return math.sqrt(a_s) * z0_hat + math.sqrt(1.0 - a_s) * eps_hat


def sample_latents(model: DenoiserModel, cfg: SamplerConfig, shape: Tuple[int, int, int],
                   rng: Optional[np.random.Generator] = None,
                   cond: Optional[np.ndarray] = None,
                   keep_latents: bool = False) -> Tuple[np.ndarray, TrajectoryTrace]:
    """Denoise pure Gaussian noise down the time grid.

    The self-conditioning input is the previous step's prediction (zero at
    the first step); with self-conditioning off it stays zero throughout.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    z = rng.standard_normal(shape)
    grid = cfg.grid()
    trace = TrajectoryTrace()
    sc: Optional[np.ndarray] = None
    pred = z
    for i, t in enumerate(grid):
        pred = denoise(model, z, float(t), sc if cfg.use_self_cond else None, cond)
        if not np.isfinite(pred).all():
            raise ArithmeticError(
                f"non-finite latent at step {i} (t={t:.4f}); trace so far: "
                f"{list(zip(trace.times, trace.magnitudes))!r}")
        trace.record(float(t), pred, keep_latents)
        if i + 1 < len(grid):
            z = euler_step(z, pred, float(t), float(grid[i + 1]), cfg.schedule)
        if cfg.use_self_cond:
            sc = pred
    return pred, trace


def sample(model: DenoiserModel, decoder: DecoderModel, cfg: SamplerConfig,
           vocab: Vocab, shape: Tuple[int, int, int],
           cond: Optional[np.ndarray] = None
           ) -> Tuple[List[str], TrajectoryTrace]:
    """Generate decoded texts plus the magnitude trace of the run.

    With `mbr_k` > 0, `shape[0]` outputs are produced and each one is the
    minimum-risk pick among its own k sampled candidates.
    """
    rng = np.random.default_rng(cfg.seed)
    if cfg.mbr_k and cfg.mbr_k > 1:
        n, m, d = shape
        latents, trace = sample_latents(
            model, cfg, (n * cfg.mbr_k, m, d), rng,
            cond=np.repeat(cond, cfg.mbr_k, axis=0) if cond is not None else None)
        ids = decode_latent(latents, decoder)
        texts = [ids_to_text(row, vocab) for row in ids]
        picked = [mbr_select(texts[i * cfg.mbr_k:(i + 1) * cfg.mbr_k]) for i in range(n)]
        return picked, trace
    latents, trace = sample_latents(model, cfg, shape, rng, cond=cond)
    ids = decode_latent(latents, decoder)
    return [ids_to_text(row, vocab) for row in ids], trace


# ---------------------------------------------------------------------------
# minimum-risk candidate selection


def _pooled_ngrams(tokens: Sequence[str], n_max: int = 4) -> Counter:
    bag: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            bag[tuple(tokens[i:i + n])] += 1
    return bag


def ngram_f1_distance(a: str, b: str) -> float:
    """1 minus the multiset F1 overlap of pooled 1..4-grams.

    Two empty texts count as identical (distance 0).
    """
    ca = _pooled_ngrams(a.split())
    cb = _pooled_ngrams(b.split())
    total = sum(ca.values()) + sum(cb.values())
    if total == 0:
        return 0.0
    inter = sum((ca & cb).values())
    return 1.0 - 2.0 * inter / total


def mbr_select(candidates: Sequence[str],
               distance: Callable[[str, str], float] = ngram_f1_distance) -> str:
    """Candidate with the lowest mean distance to the others; ties keep the
    first index."""
    if not candidates:
        raise ValueError("mbr_select needs at least one candidate")
    if len(candidates) == 1:
        return candidates[0]
    best_idx = 0
    best_risk = float("inf")
    for i, c in enumerate(candidates):
        risk = sum(distance(c, other) for j, other in enumerate(candidates) if j != i)
        risk /= len(candidates) - 1
        if risk < best_risk:
            best_risk = risk
            best_idx = i
    return candidates[best_idx]
