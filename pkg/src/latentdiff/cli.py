"""Experiment orchestration CLI.

Subcommands map onto pipeline stages::

    gen-corpus        write train/val/test splits of a synthetic corpus
    pretrain-encoder  masked pretraining of the contextual encoder
    fit-normalizer    coordinate statistics of the training latents
    train-decoder     corruption-trained latent-to-token decoder
    train-diffusion   the denoising model (+ condition encoder for pairs)
    sample            Euler-solver generation, one text file per repeat
    eval              diversity/memorization/validity metrics over repeats
    analyze           magnitude traces, the repeated self-conditioning
                      probe, per-timestep difficulty, schedule report

Every stage snapshots the effective config into the output directory,
appends to `run.log`, takes an exclusive `.lock` for the duration of the
run, and fails with the name of the missing upstream stage when a
prerequisite artifact is absent. Metric CSVs are byte-deterministic for a
fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import corpus as corpus_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .corpus import Vocab, ids_to_text, tokenize_corpus
from .decoder import DecoderModel, train_decoder
from .denoiser import (CondEncoderModel, DenoiserModel, denoise,
                       prediction_magnitude_reference, train_diffusion)
from .encoder import (EncoderConfig, EncoderModel, Normalizer, encode_batch,
                      fit_normalizer, pretrain_encoder, raw_latents)
from .metrics import (compute_report, magnitude, mean_std, repeated_sc_probe,
                      timestep_difficulty)
from .sampler import SamplerConfig, sample
from .schedule import schedule_report


class StageError(RuntimeError):
    """A prerequisite artifact is missing; the message names the stage to run."""


class LockError(RuntimeError):
    pass


def _missing(path: Path, stage: str) -> StageError:
    return StageError(
        f"missing artifact {path}; run `latentdiff {stage}` first")


class RunDir:
    """Artifact layout plus the lock/log/snapshot bookkeeping for one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)

    # artifact paths -------------------------------------------------------
    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    def split_path(self, split: str) -> Path:
        ext = "tsv" if self.cfg.corpus.kind == "pairs" else "txt"
        return self.corpus_dir / f"{split}.{ext}"

    @property
    def encoder_path(self) -> Path:
        return self.root / "encoder.npz"

    @property
    def normalizer_path(self) -> Path:
        return self.root / "normalizer.npz"

    def decoder_path(self, variant: Optional[str] = None,
                     tag: Optional[str] = None) -> Path:
        variant = variant or self.cfg.decoder.variant
        tag = tag or self.cfg.corruption_spec().tag()
        return self.root / f"decoder-{variant}-{tag}.npz"

    @property
    def diffusion_path(self) -> Path:
        return self.root / "diffusion.npz"

    @property
    def samples_dir(self) -> Path:
        return self.root / "samples"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"

    @property
    def analyze_dir(self) -> Path:
        return self.root / "analyze"

    # bookkeeping ----------------------------------------------------------
    def begin(self, stage: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"output directory {self.root} is locked by another run "
                            f"(remove {lock} if that run is dead)")
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()} {stage}\n")
        self.cfg.save(self.root / "config.ini")
        with open(self.root / "run.log", "a", encoding="utf-8") as fh:
            stamp = datetime.datetime.now().isoformat(timespec="seconds")
            fh.write(f"{stamp} {stage} config_hash={self.cfg.config_hash()}\n")

    def end(self) -> None:
        lock = self.root / ".lock"
        if lock.exists():
            lock.unlink()


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# stage implementations


def stage_gen_corpus(run: RunDir) -> None:
    cfg = run.cfg
    run.corpus_dir.mkdir(parents=True, exist_ok=True)
    if cfg.corpus.kind == "stories":
        texts = corpus_mod.generate_story_corpus(cfg.corpus.seed, cfg.corpus.count)
        dup = corpus_mod.duplicate_rate(texts)
        train, val, test = corpus_mod.split_corpus(texts, cfg.corpus.seed)
        for split, data in (("train", train), ("val", val), ("test", test)):
            corpus_mod.save_corpus(run.split_path(split), data)
        _write_csv(run.corpus_dir / "stats.csv",
                   ["key", "value"],
                   [["generated", cfg.corpus.count],
                    ["duplicate_rate", float(dup)],
                    ["train", len(train)], ["val", len(val)], ["test", len(test)]])
    else:
        pairs = corpus_mod.generate_paraphrase_pairs(cfg.corpus.seed, cfg.corpus.count)
        uniq = list(dict.fromkeys(pairs))
        rng = np.random.default_rng(cfg.corpus.seed)
        order = rng.permutation(len(uniq))
        n_train = int(round(0.8 * len(uniq)))
        n_val = int(round(0.1 * len(uniq)))
        shuffled = [uniq[i] for i in order]
        splits = {"train": shuffled[:n_train],
                  "val": shuffled[n_train:n_train + n_val],
                  "test": shuffled[n_train + n_val:]}
        for split, data in splits.items():
            corpus_mod.save_pairs(run.split_path(split), data)


def _load_split_texts(run: RunDir, split: str) -> List[str]:
    path = run.split_path(split)
    if not path.exists():
        raise _missing(path, "gen-corpus")
    if run.cfg.corpus.kind == "pairs":
        return [t for _, t in corpus_mod.load_pairs(path)]
    return corpus_mod.load_corpus(path)


def _load_split_sources(run: RunDir, split: str) -> List[str]:
    path = run.split_path(split)
    if not path.exists():
        raise _missing(path, "gen-corpus")
    return [s for s, _ in corpus_mod.load_pairs(path)]


def stage_pretrain_encoder(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    enc_cfg = cfg.encoder_config()
    if enc_cfg.mode == "embedding":
        enc = EncoderModel(enc_cfg, vocab_size=len(vocab), seed=cfg.encoder.seed)
        enc.frozen = True
        history: List[Tuple[int, float, float]] = []
    else:
        train = tokenize_corpus(_load_split_texts(run, "train"),
                                cfg.corpus.max_len, vocab)
        val = tokenize_corpus(_load_split_texts(run, "val"),
                              cfg.corpus.max_len, vocab)
        enc, history = pretrain_encoder(train, val, enc_cfg, cfg.encoder.seed,
                                        vocab, cfg.pretrain_config())
    save_checkpoint(run.encoder_path, enc.params(),
                    {"kind": "encoder", "mode": enc_cfg.mode,
                     "dim": enc_cfg.dim, "layers": enc_cfg.layers,
                     "heads": enc_cfg.heads, "max_len": enc_cfg.max_len,
                     "vocab_size": len(vocab),
                     "config_hash": cfg.config_hash()})
    _write_csv(run.root / "pretrain_curve.csv",
               ["step", "loss", "val_masked_accuracy"], history)


def load_encoder(run: RunDir) -> EncoderModel:
    if not run.encoder_path.exists():
        raise _missing(run.encoder_path, "pretrain-encoder")
    arrays, meta, _, _ = load_checkpoint(run.encoder_path)
    enc_cfg = EncoderConfig(mode=meta["mode"], dim=meta["dim"],
                            layers=meta["layers"], heads=meta["heads"],
                            max_len=meta["max_len"])
    enc = EncoderModel(enc_cfg, vocab_size=meta["vocab_size"], seed=0)
    params = enc.params()
    for name, p in params.items():
        p.data = arrays[name].astype(np.float64)
    enc.frozen = True
    return enc


def stage_fit_normalizer(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    enc = load_encoder(run)
    seqs = tokenize_corpus(_load_split_texts(run, "train"), cfg.corpus.max_len, vocab)
    norm = fit_normalizer(raw_latents(enc, seqs))
    save_checkpoint(run.normalizer_path,
                    {"mean": norm.mean, "std": norm.std},
                    {"kind": "normalizer", "config_hash": cfg.config_hash()})


def load_normalizer(run: RunDir) -> Normalizer:
    if not run.normalizer_path.exists():
        raise _missing(run.normalizer_path, "fit-normalizer")
    arrays, _, _, _ = load_checkpoint(run.normalizer_path)
    return Normalizer(mean=arrays["mean"], std=arrays["std"])


def _split_latents(run: RunDir, split: str, vocab: Vocab
                   ) -> Tuple[np.ndarray, np.ndarray]:
    cfg = run.cfg
    enc = load_encoder(run)
    norm = load_normalizer(run)
    seqs = tokenize_corpus(_load_split_texts(run, split), cfg.corpus.max_len, vocab)
    ids = np.stack([s.ids for s in seqs])
    return encode_batch(enc, norm, seqs), ids


def stage_train_decoder(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    dec_cfg = cfg.decoder_config()
    if dec_cfg.variant == "rounding":
        enc = load_encoder(run)
        if enc.cfg.mode != "embedding":
            raise ValueError("rounding decoder is defined only for the "
                             "embedding-mode latent space")
        norm = load_normalizer(run)
        table = norm.apply(enc.embed.table.data)
        save_checkpoint(run.decoder_path(), {"table": table},
                        {"kind": "decoder", "variant": "rounding",
                         "corruption": "none", "vocab_size": len(vocab),
                         "config_hash": cfg.config_hash()})
        return
    z_train, ids_train = _split_latents(run, "train", vocab)
    z_val, ids_val = _split_latents(run, "val", vocab)
    model, history = train_decoder(
        z_train, ids_train, cfg.corruption_spec(), dec_cfg,
        cfg.decoder.seed, cfg.schedule_config(), z_val, ids_val,
        vocab_size=len(vocab), train_cfg=cfg.decoder_train_config(),
        curve_path=run.root / "decoder_curve.csv")
    save_checkpoint(run.decoder_path(), model.params(),
                    {"kind": "decoder", "variant": dec_cfg.variant,
                     "corruption": cfg.corruption_spec().tag(),
                     "dim": dec_cfg.dim, "heads": dec_cfg.heads,
                     "layers": dec_cfg.layers, "mlp_hidden": dec_cfg.mlp_hidden,
                     "max_len": dec_cfg.max_len, "vocab_size": len(vocab),
                     "val_accuracy": history[-1][2] if history else None,
                     "config_hash": cfg.config_hash()})


def load_decoder(run: RunDir) -> DecoderModel:
    path = run.decoder_path()
    if not path.exists():
        raise _missing(path, "train-decoder")
    arrays, meta, _, _ = load_checkpoint(path)
    if meta["variant"] == "rounding":
        from .decoder import DecoderConfig
        model = DecoderModel(DecoderConfig(variant="rounding"),
                             vocab_size=meta["vocab_size"],
                             embedding_table=arrays["table"])
        return model
    from .decoder import DecoderConfig
    dec_cfg = DecoderConfig(variant=meta["variant"], dim=meta["dim"],
                            heads=meta["heads"], layers=meta["layers"],
                            mlp_hidden=meta["mlp_hidden"], max_len=meta["max_len"])
    model = DecoderModel(dec_cfg, vocab_size=meta["vocab_size"], seed=0)
    model.load_arrays(arrays)
    return model


def stage_train_diffusion(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    conditional = cfg.corpus.kind == "pairs"
    z_train, _ = _split_latents(run, "train", vocab)
    model = DenoiserModel(cfg.denoiser_config(cross=conditional),
                          seed=cfg.denoiser.seed)
    cond_enc = None
    cond_ids = None
    if conditional:
        sources = _load_split_sources(run, "train")
        src_seqs = tokenize_corpus(sources, cfg.corpus.max_len, vocab)
        cond_ids = np.stack([s.ids for s in src_seqs])
        cond_enc = CondEncoderModel(cfg.denoiser.dim, cfg.denoiser.heads, 2,
                                    cfg.corpus.max_len, len(vocab),
                                    seed=cfg.denoiser.seed + 1)
    opt, _ = train_diffusion(model, z_train, cfg.diffusion_train_config(),
                             cfg.schedule_config(), cfg.trainer.seed,
                             cond_ids=cond_ids, cond_enc=cond_enc,
                             curve_path=run.root / "train_curve.csv")
    params = model.params()
    if cond_enc is not None:
        params = {**params, **cond_enc.params()}
    save_checkpoint(run.diffusion_path, params,
                    {"kind": "diffusion", "schedule": cfg.schedule,
                     "conditional": conditional,
                     "denoiser": {"layers": cfg.denoiser.layers,
                                  "dim": cfg.denoiser.dim,
                                  "heads": cfg.denoiser.heads,
                                  "ff_mult": cfg.denoiser.ff_mult,
                                  "max_len": cfg.corpus.max_len},
                     "config_hash": cfg.config_hash()},
                    opt=opt)


def load_diffusion(run: RunDir, use_ema: Optional[bool] = None
                   ) -> Tuple[DenoiserModel, Optional[CondEncoderModel]]:
    if not run.diffusion_path.exists():
        raise _missing(run.diffusion_path, "train-diffusion")
    arrays, meta, _, ema = load_checkpoint(run.diffusion_path)
    if use_ema is None:
        use_ema = run.cfg.sampler.use_ema
    source = ema if (use_ema and ema) else arrays
    from .denoiser import DenoiserConfig
    d = meta["denoiser"]
    model = DenoiserModel(DenoiserConfig(layers=d["layers"], dim=d["dim"],
                                         heads=d["heads"], ff_mult=d["ff_mult"],
                                         max_len=d["max_len"],
                                         cross=meta["conditional"]), seed=0)
    model.load_arrays({k: v for k, v in source.items() if not k.startswith("cond.")})
    cond_enc = None
    if meta["conditional"]:
        vocab = Vocab.default()
        cond_enc = CondEncoderModel(d["dim"], d["heads"], 2, d["max_len"],
                                    len(vocab), seed=0)
        cond_arrays = {k: v for k, v in source.items() if k.startswith("cond.")}
        for name, p in cond_enc.params().items():
            p.data = cond_arrays[name].astype(np.float64)
    return model, cond_enc


def stage_sample(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    model, cond_enc = load_diffusion(run)
    decoder = load_decoder(run)
    run.samples_dir.mkdir(parents=True, exist_ok=True)
    m, d = cfg.corpus.max_len, cfg.denoiser.dim
    n = cfg.sampler.count
    cond = None
    if cond_enc is not None:
        sources = _load_split_sources(run, "test")[:n]
        if len(sources) < n:
            sources = (sources * (n // max(len(sources), 1) + 1))[:n]
        src_seqs = tokenize_corpus(sources, m, vocab)
        src_ids = np.stack([s.ids for s in src_seqs])
        from .autodiff import no_grad
        with no_grad():
            cond = cond_enc(src_ids).data
        corpus_mod.save_corpus(run.samples_dir / "conditions.txt", sources)
    seeds = np.random.SeedSequence(cfg.sampler.seed).spawn(cfg.sampler.repeats)
    for rep, seed_seq in enumerate(seeds):
        rep_seed = int(seed_seq.generate_state(1)[0])
        scfg = SamplerConfig(steps=cfg.sampler.steps,
                             schedule=cfg.schedule_config(), seed=rep_seed,
                             use_self_cond=cfg.sampler.self_cond,
                             mbr_k=cfg.sampler.mbr, n_samples=n)
        texts, trace = sample(model, decoder, scfg, vocab, (n, m, d), cond=cond)
        corpus_mod.save_corpus(run.samples_dir / f"texts_r{rep}.txt", texts)
        _write_csv(run.samples_dir / f"trace_r{rep}.csv",
                   ["step", "t", "magnitude"],
                   [[i, trace.times[i], trace.magnitudes[i]]
                    for i in range(len(trace))])


def stage_eval(run: RunDir) -> None:
    cfg = run.cfg
    if not run.samples_dir.exists():
        raise _missing(run.samples_dir, "sample")
    train_texts = _load_split_texts(run, "train")
    rows: List[List] = []
    per_metric: Dict[str, List[float]] = {"div": [], "mem": [], "grammar_validity": []}
    for rep in range(cfg.sampler.repeats):
        path = run.samples_dir / f"texts_r{rep}.txt"
        if not path.exists():
            raise _missing(path, "sample")
        texts = corpus_mod.load_corpus(path)
        report = compute_report(texts, train_texts, seed=cfg.sampler.seed)
        rows.append([rep, float(report.div), float(report.mem),
                     float(report.grammar_valid_rate), report.count])
        per_metric["div"].append(report.div)
        per_metric["mem"].append(report.mem)
        per_metric["grammar_validity"].append(report.grammar_valid_rate)
    run.eval_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(run.eval_dir / "metrics.csv",
               ["repeat", "div", "mem", "grammar_validity", "count"], rows)
    agg = []
    for name, values in per_metric.items():
        m, s = mean_std(values)
        agg.append([name, float(m), float(s), f"{m:.3f}_{s:.3f}"])
    _write_csv(run.eval_dir / "summary.csv",
               ["metric", "mean", "std", "mean_std"], agg)


def stage_analyze(run: RunDir) -> None:
    cfg = run.cfg
    vocab = Vocab.default()
    sched = cfg.schedule_config()
    run.analyze_dir.mkdir(parents=True, exist_ok=True)

    grid = [round(i / 100, 2) for i in range(101)]
    _write_csv(run.analyze_dir / "schedule.csv",
               ["t", "sqrt_alpha", "one_minus_alpha"],
               [[t, float(sa), float(oma)] for t, sa, oma in
                schedule_report(sched, grid)])

    model, _ = load_diffusion(run)
    decoder = load_decoder(run)
    z_val, ids_val = _split_latents(run, "val", vocab)
    m, d = cfg.corpus.max_len, cfg.denoiser.dim
    n = min(64, z_val.shape[0])

    # magnitude over trajectories of different lengths, plus the
    # training-side single-pass reference at the same times
    from .sampler import sample_latents
    mag_rows: List[List] = []
    for steps in (10, 50, 200):
        scfg = SamplerConfig(steps=steps, schedule=sched, seed=cfg.sampler.seed,
                             use_self_cond=cfg.sampler.self_cond)
        _, trace = sample_latents(model, scfg, (n, m, d))
        for i in range(len(trace)):
            mag_rows.append([steps, i, trace.times[i], trace.magnitudes[i]])
    ref = prediction_magnitude_reference(
        model, z_val, sched, [i / 20 for i in range(21)], seed=cfg.sampler.seed)
    for t, mag in sorted(ref.items()):
        mag_rows.append(["train_ref", "", t, mag])
    _write_csv(run.analyze_dir / "magnitude.csv",
               ["trajectory", "step", "t", "magnitude"], mag_rows)

    # repeated self-conditioning probe at mid-range t
    rng = np.random.default_rng(cfg.sampler.seed)
    rows_idx = rng.integers(0, z_val.shape[0], size=n)
    z0 = z_val[rows_idx]
    from .schedule import forward_sample
    z_t = forward_sample(z0, 0.5, rng.standard_normal(z0.shape), sched)
    probe = repeated_sc_probe(model, z_t, 0.5, k=8)
    _write_csv(run.analyze_dir / "sc_probe.csv",
               ["iterate", "magnitude"],
               [[i, float(v)] for i, v in enumerate(probe)])

    # per-timestep reconstruction difficulty
    diff_grid = [0.02] + [round(0.1 * i, 1) for i in range(1, 10)] + [0.98]
    rows = timestep_difficulty(model, decoder, z_val[:256], ids_val[:256],
                               sched, diff_grid, seed=cfg.sampler.seed)
    _write_csv(run.analyze_dir / "difficulty.csv",
               ["t", "mse", "token_accuracy"],
               [[t, float(mse), float(acc)] for t, mse, acc in rows])


STAGES = {
    "gen-corpus": stage_gen_corpus,
    "pretrain-encoder": stage_pretrain_encoder,
    "fit-normalizer": stage_fit_normalizer,
    "train-decoder": stage_train_decoder,
    "train-diffusion": stage_train_diffusion,
    "sample": stage_sample,
    "eval": stage_eval,
    "analyze": stage_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentdiff",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file; flags override file values")
        p.add_argument("--seed", type=int, default=None,
                       help="base seed; per-stage seeds are derived from it")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--steps", type=int, default=None,
                       help="training steps (train-*) or sampling steps (sample/analyze)")
        p.add_argument("--schedule", type=str, default=None,
                       help='noise schedule, e.g. "tan-9", "cosine", "sqrt"')
        p.add_argument("--self-cond", choices=("on", "off"), default=None)
        p.add_argument("--mbr", type=int, default=None,
                       help="MBR candidates per output (0 = single sample)")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_ini(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        base = args.seed
        cfg.corpus.seed = base + 1
        cfg.encoder.seed = base + 2
        cfg.denoiser.seed = base + 3
        cfg.decoder.seed = base + 4
        cfg.trainer.seed = base + 5
        cfg.sampler.seed = base + 6
    if args.steps is not None:
        if args.command == "train-diffusion":
            cfg.trainer.steps = args.steps
        elif args.command == "train-decoder":
            cfg.decoder.steps = args.steps
        elif args.command == "pretrain-encoder":
            cfg.encoder.pretrain_steps = args.steps
        else:
            cfg.sampler.steps = args.steps
    if args.schedule is not None:
        cfg.schedule = args.schedule
    if args.self_cond is not None:
        cfg.sampler.self_cond = args.self_cond == "on"
    if args.mbr is not None:
        cfg.sampler.mbr = args.mbr
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = RunDir(cfg)
    try:
        run.begin(args.command)
    except LockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    try:
        STAGES[args.command](run)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        run.end()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
