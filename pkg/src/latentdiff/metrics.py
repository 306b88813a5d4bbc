"""Diagnostics for generated text and for the denoising process itself:
n-gram diversity, training-set memorization, prediction magnitude, the
repeated self-conditioning probe, and per-timestep reconstruction
difficulty.

n-grams are computed over word tokens with special tokens stripped, and
pooled across the whole text set.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .corpus import SPECIAL_TOKENS, validate_story
from .decoder import DecoderModel, decode_latent
from .denoiser import DenoiserModel, denoise
from .schedule import NoiseSchedule, forward_sample


def _words(text: str) -> List[str]:
    return [tok for tok in text.split() if tok not in SPECIAL_TOKENS]


def _ngrams(tokens: Sequence[str], n: int) -> List[Tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def diversity(texts: Sequence[str]) -> float:
    """Product over n=2..4 of the unique-to-total n-gram ratio of the set."""
    if not texts:
        raise ValueError("diversity needs a non-empty text set")
    value = 1.0
    token_lists = [_words(t) for t in texts]
    for n in range(2, 5):
        seen: Set[Tuple[str, ...]] = set()
        total = 0
        for toks in token_lists:
            grams = _ngrams(toks, n)
            total += len(grams)
            seen.update(grams)
        if total == 0:
            raise ValueError(f"no {n}-grams in the text set; texts too short")
        value *= len(seen) / total
    return value


def memorization(texts: Sequence[str], train_corpus: Sequence[str]) -> float:
    """Fraction of generated 4-gram occurrences present in the training set."""
    train_grams: Set[Tuple[str, ...]] = set()
    for t in train_corpus:
        train_grams.update(_ngrams(_words(t), 4))
    total = 0
    hits = 0
    for t in texts:
        for gram in _ngrams(_words(t), 4):
            total += 1
            hits += gram in train_grams
    if total == 0:
        raise ValueError("no 4-grams extractable from the generated texts")
    return hits / total


def grammar_validity(texts: Sequence[str]) -> float:
    if not texts:
        raise ValueError("empty text set")
    return sum(validate_story(t) for t in texts) / len(texts)


def magnitude(z: np.ndarray) -> float:
    """Mean squared entry of a latent batch."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(z ** 2))


@dataclass
class MetricReport:
    div: float
    mem: float
    grammar_valid_rate: float
    count: int
    seed: int

    def __post_init__(self):
        for name in ("div", "mem", "grammar_valid_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def compute_report(texts: Sequence[str], train_corpus: Sequence[str],
                   seed: int) -> MetricReport:
    return MetricReport(
        div=diversity(texts),
        mem=memorization(texts, train_corpus),
        grammar_valid_rate=grammar_validity(texts),
        count=len(texts),
        seed=seed,
    )


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def format_mean_std(values: Sequence[float], digits: int = 3) -> str:
    m, s = mean_std(values)
    return f"{m:.{digits}f}_{s:.{digits}f}"


# ---------------------------------------------------------------------------
# denoiser-side probes


def repeated_sc_probe(model: DenoiserModel, z_t: np.ndarray, t: float,
                      k: int) -> List[float]:
    """Feed the model its own prediction k times without changing z_t.

    Starts from the zero estimate; returns the magnitude of each iterate.
    """
    if k < 2:
        raise ValueError("probe needs k >= 2 iterations")
    mags: List[float] = []
    prev: Optional[np.ndarray] = None
    for _ in range(k):
        pred = denoise(model, z_t, t, prev)
        if not np.isfinite(pred).all():
            raise ArithmeticError("non-finite prediction during the probe")
        mags.append(magnitude(pred))
        prev = pred
    return mags


def timestep_difficulty(model: DenoiserModel, decoder: DecoderModel,
                        latents: np.ndarray, ids: np.ndarray,
                        sched: NoiseSchedule, grid: Sequence[float],
                        seed: int = 0) -> List[Tuple[float, float, float]]:
    """Single-pass reconstruction difficulty per timestep.

    For each t: corrupt the latents to z_t, predict without
    self-conditioning, and report (t, reconstruction MSE, decoded token
    accuracy against the ground-truth ids).
    """
    rng = np.random.default_rng(seed)
    rows: List[Tuple[float, float, float]] = []
    for t in grid:
        eps = rng.standard_normal(latents.shape)
        z_t = forward_sample(latents, float(t), eps, sched)
        pred = denoise(model, z_t, float(t), None)
        mse = float(np.mean((latents - pred) ** 2))
        acc = float((decode_latent(pred, decoder) == ids).mean())
        rows.append((float(t), mse, acc))
    return rows
