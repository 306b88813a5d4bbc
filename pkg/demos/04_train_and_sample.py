"""A miniature end-to-end run: latent space, self-conditioned diffusion
training, a corruption-trained decoder, Euler-solver sampling, metrics.

Sized to finish in a couple of minutes; quality is accordingly modest --
the acceptance suite runs the full desk-scale version of this pipeline.
Saves checkpoints into demo_run/ for demo 05 to reuse.
"""

from pathlib import Path

import numpy as np

from latentdiff.checkpoint import save_checkpoint
from latentdiff.corpus import (Vocab, generate_story_corpus, ids_to_text,
                               split_corpus, tokenize_corpus)
from latentdiff.decoder import (CorruptionSpec, DecoderConfig, DecoderTrainConfig,
                                decode_latent, token_accuracy, train_decoder)
from latentdiff.denoiser import DenoiserConfig, DenoiserModel, DiffusionTrainConfig, train_diffusion
from latentdiff.encoder import (EncoderConfig, PretrainConfig, encode_batch,
                                fit_normalizer, pretrain_encoder, raw_latents)
from latentdiff.metrics import compute_report
from latentdiff.sampler import SamplerConfig, mbr_select, sample
from latentdiff.schedule import parse_schedule

M, D = 32, 48
vocab = Vocab.default()
sched = parse_schedule("tan-9")
out = Path("demo_run")
out.mkdir(exist_ok=True)

print("== corpus and latent space ==")
stories = generate_story_corpus(seed=1, count=1200)
train_texts, val_texts, _ = split_corpus(stories, seed=1)
train = tokenize_corpus(train_texts, M, vocab)
val = tokenize_corpus(val_texts, M, vocab)
enc, _ = pretrain_encoder(train, val,
                          EncoderConfig(mode="contextual", dim=D, layers=2,
                                        heads=4, max_len=M),
                          seed=10, vocab=vocab,
                          pretrain=PretrainConfig(steps=500, eval_every=125))
norm = fit_normalizer(raw_latents(enc, train))
z_train = encode_batch(enc, norm, train)
z_val = encode_batch(enc, norm, val)
ids_train = np.stack([s.ids for s in train])
ids_val = np.stack([s.ids for s in val])
print("train latents:", z_train.shape)

print("\n== corruption-trained decoder ==")
decoder, dec_hist = train_decoder(
    z_train, ids_train, CorruptionSpec(mode="zt", t_max=0.15),
    DecoderConfig(variant="transformer", dim=D, heads=4, layers=2, max_len=M),
    seed=30, sched=sched, val_latents=z_val, val_ids=ids_val,
    vocab_size=len(vocab),
    train_cfg=DecoderTrainConfig(steps=700, eval_every=140, lr=2e-3))
print("clean val token accuracy:", round(token_accuracy(decoder, z_val, ids_val), 4))

print("\n== self-conditioned diffusion training ==")
model = DenoiserModel(DenoiserConfig(layers=3, dim=D, heads=4, max_len=M), seed=20)
opt, curve = train_diffusion(
    model, z_train,
    DiffusionTrainConfig(steps=900, batch_size=48, lr=1e-3, warmup=50,
                         ema_decay=0.995, log_every=150),
    sched, seed=40)
for step, loss, sc_steps, mag in curve:
    print(f"  step {step:4d}  loss {loss:.4f}  sc-branch {sc_steps}/150  "
          f"pred magnitude {mag:.3f}")
model.load_arrays({k: v.copy() for k, v in opt.ema.items()})

print("\n== Euler-solver sampling (T=50, self-conditioned) ==")
cfg = SamplerConfig(steps=50, schedule=sched, seed=5, use_self_cond=True)
texts, trace = sample(model, decoder, cfg, vocab, (48, M, D))
print("first and last trace magnitudes:",
      round(trace.magnitudes[0], 3), "->", round(trace.magnitudes[-1], 3))
for t in texts[:5]:
    print("  sample:", t)

report = compute_report(texts, train_texts, seed=5)
print(f"\nmetrics: div {report.div:.3f}  mem {report.mem:.3f}  "
      f"grammar-valid {report.grammar_valid_rate:.3f}  (n={report.count})")

print("\n== minimum-risk selection among 5 candidates ==")
cand_cfg = SamplerConfig(steps=50, schedule=sched, seed=11, use_self_cond=True)
cands, _ = sample(model, decoder, cand_cfg, vocab, (5, M, D))
print("candidates:")
for c in cands:
    print("  ", c)
print("picked:", mbr_select(cands))

save_checkpoint(out / "encoder.npz", enc.params(),
                {"kind": "encoder", "dim": D, "max_len": M})
save_checkpoint(out / "normalizer.npz", {"mean": norm.mean, "std": norm.std},
                {"kind": "normalizer"})
save_checkpoint(out / "diffusion.npz", model.params(),
                {"kind": "diffusion", "layers": 3, "dim": D, "heads": 4,
                 "max_len": M})
save_checkpoint(out / "decoder.npz", decoder.params(),
                {"kind": "decoder", "variant": "transformer", "dim": D,
                 "heads": 4, "layers": 2, "max_len": M})
np.savez(out / "latents.npz", z_val=z_val, ids_val=ids_val)
print(f"\ncheckpoints written to {out}/ (used by demo 05)")
