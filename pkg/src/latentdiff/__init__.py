"""Latent text diffusion at desk scale.

A self-contained pipeline: a reverse-mode autodiff core, a synthetic
corpus with a machine-checkable grammar, a small contextual encoder that
defines the latent space, a corruption-trained decoder, a self-conditioned
denoising model with configurable noise schedules, a deterministic
Euler-solver sampler with minimum-risk candidate selection, and the
analysis metrics used to study all of it.
"""

from . import autodiff, checkpoint, config, corpus, decoder, denoiser
from . import encoder, layers, metrics, optim, sampler, schedule
from .autodiff import Tensor, backward, no_grad, parameter, stop_gradient
from .config import ExperimentConfig
from .corpus import (Vocab, TokenSeq, PairExample, detokenize,
                     generate_paraphrase_pairs, generate_story_corpus,
                     tokenize, validate_story)
from .decoder import CorruptionSpec, DecoderConfig, DecoderModel, corrupt, decode_latent
from .denoiser import DenoiserConfig, DenoiserModel, CondEncoderModel, denoise
from .encoder import EncoderConfig, EncoderModel, Normalizer, encode, fit_normalizer
from .metrics import MetricReport, diversity, magnitude, memorization
from .optim import OptimizerState, adamw_step
from .sampler import SamplerConfig, TrajectoryTrace, euler_step, mbr_select, sample
from .schedule import NoiseSchedule, alpha, forward_sample, parse_schedule

__version__ = "0.1.0"
