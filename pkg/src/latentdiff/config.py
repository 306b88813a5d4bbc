"""Experiment configuration: one human-editable INI file fully determines a
run together with the code version. CLI flags override file values, and
the effective config is snapshotted into every output directory.

Dataclass defaults are the reference-scale training values (batch 512,
100k steps, 500 warmup steps, EMA decay 0.9999); `configs/desk.ini` holds
the CPU-sized overrides actually used by the shipped experiments.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .decoder import CorruptionSpec, DecoderConfig, DecoderTrainConfig
from .denoiser import DenoiserConfig, DiffusionTrainConfig
from .encoder import EncoderConfig, PretrainConfig
from .sampler import SamplerConfig
from .schedule import parse_schedule


@dataclass
class CorpusSpec:
    kind: str = "stories"             # "stories" or "pairs"
    count: int = 5000
    seed: int = 1
    max_len: int = 32

    def __post_init__(self):
        if self.kind not in ("stories", "pairs"):
            raise ValueError(f"unknown corpus kind {self.kind!r}")


@dataclass
class EncoderSpec:
    mode: str = "contextual"
    dim: int = 64
    layers: int = 2
    heads: int = 4
    pretrain_steps: int = 2000
    pretrain_batch: int = 64
    pretrain_lr: float = 1e-3
    seed: int = 10


@dataclass
class DenoiserSpec:
    layers: int = 4
    dim: int = 64
    heads: int = 4
    ff_mult: int = 4
    p_self_cond: float = 0.5
    seed: int = 20


@dataclass
class DecoderSpec:
    variant: str = "transformer"
    corruption: str = "zt"
    t_max: float = 0.15
    sigma: float = 0.0
    layers: int = 3
    heads: int = 4
    mlp_hidden: int = 256
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 30


@dataclass
class TrainerSpec:
    lr: float = 2e-4
    batch_size: int = 512
    steps: int = 100_000
    warmup: int = 500
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.980
    ema_decay: float = 0.9999
    seed: int = 40


@dataclass
class SamplerSpec:
    steps: int = 50
    self_cond: bool = True
    mbr: int = 0
    count: int = 200
    repeats: int = 5
    use_ema: bool = True
    seed: int = 50


@dataclass
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    schedule: str = "tan-9"
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    trainer: TrainerSpec = field(default_factory=TrainerSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    out_dir: str = "runs/default"

    # ---- conversions to the per-module config objects

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(mode=self.encoder.mode, dim=self.encoder.dim,
                             layers=self.encoder.layers, heads=self.encoder.heads,
                             max_len=self.corpus.max_len)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(steps=self.encoder.pretrain_steps,
                              batch_size=self.encoder.pretrain_batch,
                              lr=self.encoder.pretrain_lr)

    def schedule_config(self):
        return parse_schedule(self.schedule)

    def denoiser_config(self, cross: bool = False) -> DenoiserConfig:
        return DenoiserConfig(layers=self.denoiser.layers, dim=self.denoiser.dim,
                              heads=self.denoiser.heads, ff_mult=self.denoiser.ff_mult,
                              max_len=self.corpus.max_len, cross=cross)

    def diffusion_train_config(self) -> DiffusionTrainConfig:
        t = self.trainer
        return DiffusionTrainConfig(steps=t.steps, batch_size=t.batch_size, lr=t.lr,
                                    betas=(t.beta1, t.beta2),
                                    weight_decay=t.weight_decay, clip_norm=t.clip_norm,
                                    warmup=t.warmup, ema_decay=t.ema_decay,
                                    p_plain=1.0 - self.denoiser.p_self_cond)

    def corruption_spec(self) -> CorruptionSpec:
        return CorruptionSpec(mode=self.decoder.corruption,
                              t_max=self.decoder.t_max, sigma=self.decoder.sigma)

    def decoder_config(self, cross: bool = False) -> DecoderConfig:
        return DecoderConfig(variant=self.decoder.variant, dim=self.encoder.dim,
                             heads=self.decoder.heads, layers=self.decoder.layers,
                             mlp_hidden=self.decoder.mlp_hidden,
                             max_len=self.corpus.max_len, cross=cross)

    def decoder_train_config(self) -> DecoderTrainConfig:
        return DecoderTrainConfig(steps=self.decoder.steps,
                                  batch_size=self.decoder.batch_size,
                                  lr=self.decoder.lr)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(steps=self.sampler.steps,
                             schedule=self.schedule_config(),
                             seed=self.sampler.seed,
                             use_self_cond=self.sampler.self_cond,
                             mbr_k=self.sampler.mbr,
                             n_samples=self.sampler.count)

    # ---- INI round trip

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section_name in ("corpus", "encoder", "denoiser", "decoder",
                             "trainer", "sampler"):
            section = getattr(self, section_name)
            cp[section_name] = {k: _fmt(v) for k, v in asdict(section).items()}
        cp["run"] = {"schedule": self.schedule, "out_dir": self.out_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_ini(cls, path: Optional[Path]) -> "ExperimentConfig":
        cfg = cls()
        if path is None:
            return cfg
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section_name, spec in (("corpus", cfg.corpus), ("encoder", cfg.encoder),
                                   ("denoiser", cfg.denoiser), ("decoder", cfg.decoder),
                                   ("trainer", cfg.trainer), ("sampler", cfg.sampler)):
            if section_name not in cp:
                continue
            known = {f.name: f.type for f in fields(spec)}
            for key, raw in cp[section_name].items():
                if key not in known:
                    raise KeyError(f"unknown config key [{section_name}] {key}")
                setattr(spec, key, _parse(raw, getattr(spec, key)))
        if "run" in cp:
            if "schedule" in cp["run"]:
                cfg.schedule = cp["run"]["schedule"]
            if "out_dir" in cp["run"]:
                cfg.out_dir = cp["run"]["out_dir"]
        return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    return str(v)


def _parse(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("on", "true", "1", "yes"):
            return True
        if raw.lower() in ("off", "false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw
