"""Desk-scale experiment setup shared by the CLI and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .synthdata import DomainConfig, generate, random_shift, split_trials
from .trainer import Corpora, Trials, sub_seed


@dataclass(frozen=True)
class TrialSizes:
    n_target: int = 1000
    n_nontarget: int = 1000


def default_domain_configs(seed: int, feature_dim: int = 20, shift_offset_norm: float = 3.0, shift_angle: float | None = math.pi / 2):
    source = DomainConfig(n_speakers=200, utts_per_speaker=10, segs_per_utt=4, feature_dim=feature_dim,
                          n_eval_speakers=40, seed=sub_seed(seed, "data.source"), domain="source")
    a, b = random_shift(sub_seed(seed, "data.shift"), feature_dim, shift_offset_norm, shift_angle)
    target = DomainConfig(n_speakers=50, utts_per_speaker=8, segs_per_utt=4, feature_dim=feature_dim,
                          n_eval_speakers=40, shift_matrix=a, shift_offset=b,
                          seed=sub_seed(seed, "data.target"), domain="target")
    return source, target


def build(source_cfg: DomainConfig, target_cfg: DomainConfig, sizes: TrialSizes = TrialSizes(), seed: int = 0):
    src, tgt = generate(source_cfg), generate(target_cfg)
    corpora = Corpora(src.subset("train"), tgt.subset("train"), src.subset("eval"), tgt.subset("eval"))
    trials = Trials(
        split_trials(corpora.source_eval, sizes.n_target, sizes.n_nontarget, sub_seed(seed, "trials.source")),
        split_trials(corpora.target_eval, sizes.n_target, sizes.n_nontarget, sub_seed(seed, "trials.target")),
    )
    return corpora, trials


def build_default(seed: int, sizes: TrialSizes = TrialSizes(), shift: dict | None = None, **overrides):
    source, target = default_domain_configs(seed, **(shift or {}))
    if overrides:
        source = replace(source, **overrides)
        target = replace(target, **overrides)
    return build(source, target, sizes, seed)
