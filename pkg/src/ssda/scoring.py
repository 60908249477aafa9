"""Cosine trial scoring and equal error rate."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .numgrad import l2_normalize


@dataclass
class ScoreSet:
    labels: np.ndarray  # 1 target, 0 nontarget
    scores: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels.shape != self.scores.shape or self.labels.ndim != 1:
            raise ValueError("labels and scores must be parallel 1-d arrays")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")


def score_trials(embeddings: Mapping[str, np.ndarray], trials) -> ScoreSet:
    enroll, test, labels = [], [], []
    for t in trials:
        for uid in (t.enroll_id, t.test_id):
            if uid not in embeddings:
                raise KeyError(f"no embedding for id {uid!r}")
        enroll.append(embeddings[t.enroll_id])
        test.append(embeddings[t.test_id])
        labels.append(t.label)
    if not labels:
        return ScoreSet(np.zeros(0, dtype=np.int64), np.zeros(0))
    en, _ = l2_normalize(np.asarray(enroll, dtype=np.float64))
    tn, _ = l2_normalize(np.asarray(test, dtype=np.float64))
    s = np.clip(np.einsum("td,td->t", en, tn), -1.0, 1.0)
    return ScoreSet(np.asarray(labels), s)


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """EER over thresholds at the distinct scores.

    A trial is accepted when score >= threshold. The threshold minimizing
    |FAR - FRR| is chosen and (FAR + FRR) / 2 reported. Ties go to the smaller
    (FAR + FRR) / 2, then to the lower threshold; the first rule keeps the
    result unchanged when classes are swapped and scores negated.
    Comparisons use integer cross-multiplication so ties are exact.
    """
    lab = scores.labels.astype(bool)
    n_tgt = int(lab.sum())
    n_non = int((~lab).sum())
    if n_tgt == 0 or n_non == 0:
        raise ValueError("EER needs at least one target and one nontarget trial")

    order = np.argsort(scores.scores, kind="stable")
    s = scores.scores[order]
    is_tgt = lab[order]
    thresholds, first = np.unique(s, return_index=True)
    # trials strictly below threshold thresholds[i] are exactly s[:first[i]]
    tgt_below = np.concatenate([[0], np.cumsum(is_tgt)])[first]
    non_below = np.concatenate([[0], np.cumsum(~is_tgt)])[first]
    fr = tgt_below
    fa = n_non - non_below
    gap = np.abs(fa * n_tgt - fr * n_non)
    total = fa * n_tgt + fr * n_non
    best = int(np.lexsort((np.arange(len(gap)), total, gap))[0])
    eer = (fa[best] / n_non + fr[best] / n_tgt) / 2.0
    return float(eer), float(thresholds[best])


def read_scores(path) -> ScoreSet:
    """Score file lines: ``label enroll_id test_id score``."""
    labels, values = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) != 4 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected 'label enroll_id test_id score'")
            labels.append(int(parts[0]))
            values.append(float(parts[3]))
    return ScoreSet(np.asarray(labels), np.asarray(values))


def write_scores(trials, scores: ScoreSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, v in zip(trials, scores.scores):
            fh.write(f"{t.label} {t.enroll_id} {t.test_id} {float(v)!r}\n")


def read_embeddings(path) -> dict[str, np.ndarray]:
    """Embedding file lines: ``id v1 v2 ... vD``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'id' followed by values")
            out[parts[0]] = np.array([float(t) for t in parts[1:]])
    return out


def write_embeddings(embeddings: Mapping[str, np.ndarray], path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for uid, v in embeddings.items():
            fh.write(uid + " " + " ".join(repr(float(x)) for x in v) + "\n")
