"""Versioned checkpoint container.

A checkpoint is a single `.npz` archive holding named float64 parameter
arrays plus a JSON metadata blob. Keys:

    __meta__        JSON: {"format_version": 1, "kind": ..., "config": ...,
                    "config_hash": ..., "step": ...} (kind-specific extras
                    are allowed and preserved)
    param:<name>    raw parameter arrays
    ema:<name>      EMA shadow arrays (optional)
    opt_m:<name>    first-moment arrays (optional)
    opt_v:<name>    second-moment arrays (optional)

The format version is bumped only for incompatible layout changes; loaders
reject unknown versions.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import Tensor
from .optim import OptimizerState

FORMAT_VERSION = 1


def save_checkpoint(path: Path, params: Dict[str, Tensor], meta: dict,
                    opt: Optional[OptimizerState] = None) -> None:
    arrays: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        arrays[f"param:{name}"] = p.data if isinstance(p, Tensor) else np.asarray(p)
    full_meta = {"format_version": FORMAT_VERSION, **meta}
    if opt is not None:
        full_meta["optimizer"] = {
            "lr": opt.lr, "betas": list(opt.betas), "eps": opt.eps,
            "weight_decay": opt.weight_decay, "clip_norm": opt.clip_norm,
            "warmup_steps": opt.warmup_steps, "ema_decay": opt.ema_decay,
            "step": opt.step,
        }
        for name in params:
            arrays[f"ema:{name}"] = opt.ema[name]
            arrays[f"opt_m:{name}"] = opt.m[name]
            arrays[f"opt_v:{name}"] = opt.v[name]
    arrays["__meta__"] = np.frombuffer(
        json.dumps(full_meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], dict,
                                         Optional[OptimizerState],
                                         Optional[Dict[str, np.ndarray]]]:
    """Returns (params, meta, optimizer state or None, EMA arrays or None)."""
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {meta.get('format_version')!r}")
        params = {k[len("param:"):]: archive[k] for k in archive.files
                  if k.startswith("param:")}
        ema = {k[len("ema:"):]: archive[k] for k in archive.files
               if k.startswith("ema:")} or None
        opt = None
        if "optimizer" in meta:
            o = meta["optimizer"]
            opt = OptimizerState(
                lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"],
                weight_decay=o["weight_decay"], clip_norm=o["clip_norm"],
                warmup_steps=o["warmup_steps"], ema_decay=o["ema_decay"],
                step=o["step"])
            opt.m = {k[len("opt_m:"):]: archive[k] for k in archive.files
                     if k.startswith("opt_m:")}
            opt.v = {k[len("opt_v:"):]: archive[k] for k in archive.files
                     if k.startswith("opt_v:")}
            opt.ema = dict(ema) if ema else {}
    return params, meta, opt, ema
