"""Noise schedules for the variance-preserving forward process.

Three families over t in [0, 1]:

    tan-d:   alpha(t) = 1 / (1 + tan(t*pi/2)^2 * d^2)
    cosine:  alpha(t) = cos(((t+s)/(1+s)) * pi/2)^2
    sqrt:    alpha(t) = 1 - sqrt(t + s)

The tan family is evaluated on t clamped to `t_clip` because tan(pi/2)
is unbounded; every family's alpha is floored just above zero so that
downstream square roots and divisions stay finite while the curve stays
strictly decreasing on any reasonable grid. Larger d makes the tan family
noisier at every interior t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple

import numpy as np

ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    family: str = "tan"
    d: float = 9.0
    s: float = 1e-4
    t_clip: Tuple[float, float] = (1e-4, 1.0 - 1e-4)

    def __post_init__(self):
        if self.family not in ("tan", "cosine", "sqrt"):
            raise ValueError(f"unknown schedule family {self.family!r}")
        if self.family == "tan" and self.d <= 0:
            raise ValueError("tan schedule needs d > 0")

    @property
    def name(self) -> str:
        if self.family == "tan":
            d = self.d
            return f"tan-{int(d)}" if float(d).is_integer() else f"tan-{d}"
        return self.family


def parse_schedule(name: str) -> NoiseSchedule:
    """Parse a config string like "tan-9", "cosine" or "sqrt"."""
    name = name.strip().lower()
    if name.startswith("tan-"):
        return NoiseSchedule(family="tan", d=float(name[4:]))
    if name == "tan":
        return NoiseSchedule(family="tan")
    if name in ("cosine", "sqrt"):
        return NoiseSchedule(family=name)
    raise ValueError(f"cannot parse schedule {name!r}")


def alpha(t, sched: NoiseSchedule):
    """Signal retention alpha_t; accepts a scalar or an array of t."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"t outside [0, 1]: {t!r}")
    if sched.family == "tan":
        tc = np.clip(t_arr, sched.t_clip[0], sched.t_clip[1])
        a = 1.0 / (1.0 + np.tan(tc * math.pi / 2.0) ** 2 * sched.d ** 2)
    elif sched.family == "cosine":
        a = np.cos(((t_arr + sched.s) / (1.0 + sched.s)) * math.pi / 2.0) ** 2
    else:
        a = 1.0 - np.sqrt(t_arr + sched.s)
    a = np.clip(a, ALPHA_EPS, 1.0 - ALPHA_EPS)
    return float(a) if np.ndim(t) == 0 else a


def forward_sample(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward-process sample z_t = sqrt(a) z0 + sqrt(1-a) eps.

    `t` may be a scalar (shared) or one value per leading batch entry.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    a = np.asarray(alpha(t, sched), dtype=np.float64)
    if a.ndim == 1:
        if a.shape[0] != z0.shape[0]:
            raise ValueError("per-example t must match the batch size")
        a = a.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps


def schedule_report(sched: NoiseSchedule, grid: Iterable[float]) -> List[Tuple[float, float, float]]:
    """Rows of (t, sqrt(alpha_t), 1 - alpha_t) for plotting/comparison."""
    rows = []
    for t in grid:
        a = alpha(float(t), sched)
        rows.append((float(t), math.sqrt(a), 1.0 - a))
    return rows
