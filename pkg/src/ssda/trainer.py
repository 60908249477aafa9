"""Training regimes: supervised source, self-supervised target, SSDA, SSDA-Joint, supervised-joint."""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import encoder as enc
from .encoder import EncoderParams
from .numgrad import NumericError
from .objectives import (
    CONTRASTIVE_OBJECTIVES,
    EmbeddingBatch,
    LossConfig,
    LossOutput,
    aam_softmax_loss,
    joint_loss,
    softmax_ce_loss,
)
from .sampler import BatchSpec, Sampler, gather
from .scoring import ScoreSet, compute_eer, score_trials
from .synthdata import SyntheticCorpus, TrialList

REGIMES = ("source_supervised", "target_selfsup", "ssda", "ssda_joint", "supervised_joint")
CLASSIFICATION_OBJECTIVES = ("softmax", "aam")
NEEDS_CHECKPOINT = ("ssda", "ssda_joint")
UNLABELED_TARGET = ("target_selfsup", "ssda", "ssda_joint")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "ssda_joint"
    contrastive_objective: str = "proto"
    classification_objective: str = "aam"
    steps: int = 2000
    learning_rate: float = 0.05
    batch: BatchSpec = field(default_factory=BatchSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    dims: tuple = (20, 32, 16)
    init_checkpoint: EncoderParams | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.contrastive_objective not in CONTRASTIVE_OBJECTIVES:
            raise ValueError(f"contrastive_objective must be one of {tuple(CONTRASTIVE_OBJECTIVES)}")
        if self.classification_objective not in CLASSIFICATION_OBJECTIVES:
            raise ValueError(f"classification_objective must be one of {CLASSIFICATION_OBJECTIVES}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.contrastive_objective in ("contrastive", "triplet") and self.batch.m_segs != 2:
            raise ValueError(f"{self.contrastive_objective} loss needs m_segs == 2")

    def echo(self) -> dict:
        d = asdict(replace(self, init_checkpoint=None))
        d["init_checkpoint"] = self.init_checkpoint is not None
        return d


@dataclass
class Corpora:
    source_train: SyntheticCorpus
    target_train: SyntheticCorpus
    source_eval: SyntheticCorpus
    target_eval: SyntheticCorpus


@dataclass
class Trials:
    source: TrialList
    target: TrialList


@dataclass
class RunReport:
    config: dict
    loss_trace: list[tuple[int, float, float | None, float | None]]
    init_params: EncoderParams
    params: EncoderParams
    source_eer: float
    target_eer: float
    target_label_reads: int

    def loss_csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)

        rows = ["step,loss_total,loss_cla,loss_cl"]
        rows += [f"{s},{fmt(t)},{fmt(a)},{fmt(c)}" for s, t, a, c in self.loss_trace]
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        lines = [f"source_eer={self.source_eer!r}", f"target_eer={self.target_eer!r}",
                 f"target_label_reads={self.target_label_reads}", f"steps_run={len(self.loss_trace)}"]
        if self.loss_trace:
            lines.append(f"final_loss_total={self.loss_trace[-1][1]!r}")
        for key, val in sorted(_flatten(self.config).items()):
            lines.append(f"config.{key}={val}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.txt", "checkpoint": out / "checkpoint.txt", "loss": out / "loss.csv"}
        paths["report"].write_text(self.to_text(), encoding="utf-8")
        paths["loss"].write_text(self.loss_csv(), encoding="utf-8")
        enc.save_checkpoint(self.params, paths["checkpoint"])
        return paths


def _flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, Mapping):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def parse_report(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def sub_seed(seed: int, name: str) -> int:
    """Named, independent child seed of a top-level seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def sgd_step(params, grads: Mapping[str, np.ndarray], learning_rate: float):
    """p <- p - lr * g for every named gradient; parameters without a gradient are kept."""
    named = params.named() if isinstance(params, EncoderParams) else dict(params)
    new = {}
    for name, p in named.items():
        p = np.asarray(p, dtype=np.float64)
        if name in grads:
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            new[name] = p - learning_rate * g
        else:
            new[name] = p.copy()
    unknown = set(grads) - set(named)
    if unknown:
        raise ValueError(f"gradients for unknown parameters: {sorted(unknown)}")
    return EncoderParams.from_named(new) if isinstance(params, EncoderParams) else new


def utterance_embeddings(params: EncoderParams, corpus: SyntheticCorpus, ids=None) -> dict[str, np.ndarray]:
    """Mean of per-segment embeddings for each requested utterance."""
    ids = [u.utt_id for u in corpus.utterances] if ids is None else list(ids)
    utts = [corpus[i] for i in ids]
    feats = np.concatenate([u.segments for u in utts])
    emb = enc.forward(params, feats)
    out, start = {}, 0
    for uid, u in zip(ids, utts):
        n = len(u.segments)
        out[uid] = emb[start:start + n].mean(axis=0)
        start += n
    return out


def evaluate_checkpoint(params: EncoderParams, corpus: SyntheticCorpus, trials: TrialList) -> float:
    return score_checkpoint(params, corpus, trials)[0]


def score_checkpoint(params, corpus, trials) -> tuple[float, ScoreSet]:
    emb = utterance_embeddings(params, corpus, trials.ids())
    scores = score_trials(emb, trials)
    return compute_eer(scores)[0], scores


def classification_loss(kind: str, embeddings, head, labels, margin: float, scale: float) -> LossOutput:
    """L_cla over a labeled batch; grads keyed ``embeddings`` and ``class_weights``."""
    if kind == "aam":
        return aam_softmax_loss(embeddings, head, labels, margin, scale)
    logits = embeddings @ head.T
    out = softmax_ce_loss(logits, labels)
    d = out.grads["logits"]
    return LossOutput(out.kind, out.value, {"embeddings": d @ head, "class_weights": d.T @ embeddings})


def _n_classes(corpus: SyntheticCorpus) -> int:
    return max(corpus.speakers()) + 1


def _initial_params(cfg: TrainConfig, corpora: Corpora) -> EncoderParams:
    if cfg.regime in NEEDS_CHECKPOINT and cfg.init_checkpoint is None:
        raise TrainingError(f"regime {cfg.regime!r} requires an init checkpoint from a source-trained model")
    rng = np.random.default_rng(sub_seed(cfg.seed, "head"))
    if cfg.init_checkpoint is not None:
        params = enc.clone_for_adaptation(cfg.init_checkpoint)
    else:
        params = enc.init_params(sub_seed(cfg.seed, "init"), cfg.dims)
    if cfg.regime in ("source_supervised", "ssda_joint", "supervised_joint") and "source" not in params.heads:
        params.heads["source"] = enc.init_head(rng, _n_classes(corpora.source_train), params.embed_dim)
    if cfg.regime == "supervised_joint" and "target" not in params.heads:
        params.heads["target"] = enc.init_head(rng, _n_classes(corpora.target_train), params.embed_dim)
    return params


class _Step:
    """One regime's loss evaluation: returns (total, cla, cl, param grads)."""

    def __init__(self, cfg: TrainConfig, corpora: Corpora):
        self.cfg = cfg
        self.corpora = corpora
        self.src_sampler = Sampler(sub_seed(cfg.seed, "sampler.source"))
        self.tgt_sampler = Sampler(sub_seed(cfg.seed, "sampler.target"))
        self.objective = CONTRASTIVE_OBJECTIVES[cfg.contrastive_objective]

    def _labeled(self, params, sampler, corpus, head: str, margin: float):
        refs = sampler.labeled(corpus, self.cfg.batch.source_size)
        labels = np.array([r.speaker_label for r in refs])
        emb, cache = enc.forward_cached(params, gather(corpus, refs))
        out = classification_loss(self.cfg.classification_objective, emb, params.heads[head], labels,
                                  margin, self.cfg.loss.aam_scale)
        return out, cache

    def _contrastive(self, params):
        b = self.cfg.batch
        refs = self.tgt_sampler.contrastive(self.corpora.target_train, b.n_utts, b.m_segs)
        feats = gather(self.corpora.target_train, refs)
        n, m, f = feats.shape
        emb, cache = enc.forward_cached(params, feats.reshape(n * m, f))
        out = self.objective(EmbeddingBatch(emb.reshape(n, m, -1)), self.cfg.loss)
        return out, cache

    def __call__(self, params: EncoderParams):
        cfg, c = self.cfg, self.corpora
        regime = cfg.regime
        if regime == "source_supervised":
            cla, cache = self._labeled(params, self.src_sampler, c.source_train, "source", cfg.loss.aam_margin_source)
            grads = enc.backward(params, cache, cla.grads["embeddings"])
            grads["head.source"] = cla.grads["class_weights"]
            return cla.value, cla.value, None, grads
        if regime in ("target_selfsup", "ssda"):
            cl, cache = self._contrastive(params)
            g = cl.grads["embeddings"]
            return cl.value, None, cl.value, enc.backward(params, cache, g.reshape(-1, g.shape[-1]))

        cla, src_cache = self._labeled(params, self.src_sampler, c.source_train, "source", cfg.loss.aam_margin_source)
        if regime == "ssda_joint":
            cl, tgt_cache = self._contrastive(params)
        else:
            cl, tgt_cache = self._labeled(params, self.tgt_sampler, c.target_train, "target", cfg.loss.aam_margin_target)
        total = joint_loss(cla, cl, cfg.loss)
        g_src = total.grads["cla.embeddings"]
        g_tgt = total.grads["cl.embeddings"]
        grads = enc.backward(params, src_cache, g_src)
        for k, v in enc.backward(params, tgt_cache, g_tgt.reshape(-1, g_tgt.shape[-1])).items():
            grads[k] = grads[k] + v
        grads["head.source"] = total.grads["cla.class_weights"]
        if regime == "supervised_joint":
            grads["head.target"] = total.grads["cl.class_weights"]
        return total.value, cla.value, cl.value, grads


def train(cfg: TrainConfig, corpora: Corpora, trials: Trials) -> RunReport:
    params = _initial_params(cfg, corpora)
    init = enc.clone_for_adaptation(params)
    reads_before = corpora.target_train.label_reads
    step_fn = _Step(cfg, corpora)
    trace = []
    for step in range(cfg.steps):
        try:
            total, cla, cl, grads = step_fn(params)
        except NumericError as exc:
            raise TrainingError(f"numeric failure at step {step}: {exc}") from exc
        if not math.isfinite(total):
            raise TrainingError(f"non-finite loss at step {step}")
        trace.append((step, total, cla, cl))
        params = sgd_step(params, grads, cfg.learning_rate)
    return RunReport(
        config=cfg.echo(),
        loss_trace=trace,
        init_params=init,
        params=params,
        source_eer=evaluate_checkpoint(params, corpora.source_eval, trials.source),
        target_eer=evaluate_checkpoint(params, corpora.target_eval, trials.target),
        target_label_reads=corpora.target_train.label_reads - reads_before,
    )
