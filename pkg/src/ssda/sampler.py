"""Seeded batch construction.

Contrastive batches are N utterances x M distinct segments and carry no
speaker labels: positives come from the same utterance, negatives from the
other utterances in the batch. Labeled batches (for the classification loss)
are the only path that reads ``corpus.label``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthdata import SyntheticCorpus


@dataclass(frozen=True)
class BatchSpec:
    n_utts: int = 32
    m_segs: int = 2
    seed: int = 0
    domain: str = "target"
    source_batch: int | None = None  # joint mode; defaults to n_utts * m_segs

    def __post_init__(self):
        if self.n_utts < 2 or self.m_segs < 2:
            raise ValueError("BatchSpec needs n_utts >= 2 and m_segs >= 2")
        if self.domain not in ("source", "target", "joint"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.source_batch is not None and self.source_batch < 1:
            raise ValueError("source_batch must be >= 1")

    @property
    def source_size(self) -> int:
        return self.source_batch if self.source_batch is not None else self.n_utts * self.m_segs


@dataclass(frozen=True)
class SegmentRef:
    utterance_id: str
    segment_index: int
    speaker_label: int | None = None


class Sampler:
    """Owns one RNG stream; successive calls continue the stream."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def contrastive(self, corpus: SyntheticCorpus, n_utts: int, m_segs: int) -> list[list[SegmentRef]]:
        if len(corpus) < n_utts:
            raise ValueError(f"need {n_utts} utterances, corpus has {len(corpus)} (short by {n_utts - len(corpus)})")
        eligible = [u for u in corpus.utterances if len(u.segments) >= m_segs]
        if len(eligible) < n_utts:
            raise ValueError(
                f"need {n_utts} utterances with >= {m_segs} segments, only {len(eligible)} qualify"
            )
        picks = self.rng.choice(len(eligible), size=n_utts, replace=False)
        batch = []
        for p in picks:
            utt = eligible[p]
            segs = self.rng.choice(len(utt.segments), size=m_segs, replace=False)
            batch.append([SegmentRef(utt.utt_id, int(s)) for s in segs])
        return batch

    def labeled(self, corpus: SyntheticCorpus, size: int) -> list[SegmentRef]:
        offsets = np.cumsum([0] + [len(u.segments) for u in corpus.utterances])
        total = int(offsets[-1])
        if total < size:
            raise ValueError(f"need {size} segments, corpus has {total}")
        flat = self.rng.choice(total, size=size, replace=False)
        refs = []
        for f in flat:
            ui = int(np.searchsorted(offsets, f, side="right") - 1)
            utt = corpus.utterances[ui]
            refs.append(SegmentRef(utt.utt_id, int(f - offsets[ui]), corpus.label(utt.utt_id)))
        return refs


def sample_contrastive_batch(corpus: SyntheticCorpus, spec: BatchSpec) -> list[list[SegmentRef]]:
    return Sampler(spec.seed).contrastive(corpus, spec.n_utts, spec.m_segs)


def sample_joint_batch(
    source_corpus: SyntheticCorpus, target_corpus: SyntheticCorpus, spec: BatchSpec
) -> tuple[list[SegmentRef], list[list[SegmentRef]]]:
    """Labeled source segments plus an unlabeled target contrastive batch.

    The two halves draw from independent streams derived from ``spec.seed``.
    """
    src_seed, tgt_seed = np.random.SeedSequence(spec.seed).spawn(2)
    source = Sampler(src_seed).labeled(source_corpus, spec.source_size)
    target = Sampler(tgt_seed).contrastive(target_corpus, spec.n_utts, spec.m_segs)
    return source, target


def gather(corpus: SyntheticCorpus, refs) -> np.ndarray:
    """Feature rows for a flat list of refs, or an N x M x F block for a nested batch."""
    if refs and isinstance(refs[0], list):
        return np.stack([gather(corpus, row) for row in refs])
    return np.stack([corpus[r.utterance_id].segments[r.segment_index] for r in refs])
