"""Synthetic two-domain speaker corpora and verification trial lists.

Speaker means live in a low-dimensional subspace of the feature space; each
utterance adds an isotropic offset and each segment isotropic noise. The
target domain is additionally pushed through an affine map ``x -> A x + b``,
which moves speaker information out of the subspace a source-trained encoder
has learned to read.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

DOMAINS = ("source", "target")


@dataclass(frozen=True)
class DomainConfig:
    n_speakers: int
    utts_per_speaker: int
    segs_per_utt: int
    feature_dim: int = 20
    speaker_spread: float = 1.0
    utt_spread: float = 0.35
    seg_noise: float = 0.25
    speaker_rank: int | None = 6
    n_eval_speakers: int = 0
    shift_matrix: tuple | None = None
    shift_offset: tuple | None = None
    seed: int = 0
    domain: str = "source"

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "segs_per_utt", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_eval_speakers < 0:
            raise ValueError("n_eval_speakers must be >= 0")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}")
        if not (self.speaker_spread > 0 and self.utt_spread > 0 and self.seg_noise >= 0):
            raise ValueError("spreads must be positive and seg_noise non-negative")
        if not self.seg_noise < self.utt_spread < self.speaker_spread:
            raise ValueError("need seg_noise < utt_spread < speaker_spread")
        if self.speaker_rank is not None and not 1 <= self.speaker_rank <= self.feature_dim:
            raise ValueError("speaker_rank must lie in [1, feature_dim]")
        if self.shift_matrix is not None:
            a = self.shift_array()
            if a.shape != (self.feature_dim, self.feature_dim):
                raise ValueError(f"shift_matrix must be {self.feature_dim} x {self.feature_dim}")
            if np.linalg.cond(a) > 10.0:
                raise ValueError("shift_matrix condition number exceeds 10")
        if self.shift_offset is not None and len(self.shift_offset) != self.feature_dim:
            raise ValueError("shift_offset length must equal feature_dim")

    def shift_array(self) -> np.ndarray:
        if self.shift_matrix is None:
            return np.eye(self.feature_dim)
        return np.array(self.shift_matrix, dtype=np.float64)

    def offset_array(self) -> np.ndarray:
        if self.shift_offset is None:
            return np.zeros(self.feature_dim)
        return np.array(self.shift_offset, dtype=np.float64)


def random_shift(seed: int, dim: int, offset_norm: float, max_angle: float | None = None) -> tuple[tuple, tuple]:
    """Random rotation plus an offset of the given norm, as nested tuples.

    With ``max_angle`` the rotation is ``expm(K)`` for a random skew-symmetric
    ``K`` whose largest rotation angle equals ``max_angle`` (radians);
    otherwise it is drawn uniformly from O(dim).
    """
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(dim, dim))
    if max_angle is None:
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
    else:
        k = g - g.T
        k *= max_angle / np.max(np.abs(np.linalg.eigvals(k)))
        q = expm(k)
    b = rng.normal(size=dim)
    b *= offset_norm / np.linalg.norm(b)
    return tuple(map(tuple, q.tolist())), tuple(b.tolist())


@dataclass
class Utterance:
    utt_id: str
    segments: np.ndarray  # S x F


class SyntheticCorpus:
    """Utterances with speaker labels kept behind a counting accessor.

    ``label_reads`` counts every label lookup so training code can prove it
    never touched target-domain labels.
    """

    def __init__(self, domain: str, utterances: list[Utterance], labels: dict[str, int], config: dict | None = None):
        if domain not in DOMAINS:
            raise ValueError(f"unknown domain {domain!r}")
        self.domain = domain
        self.utterances = list(utterances)
        self._labels = dict(labels)
        self.config = config or {}
        self.label_reads = 0
        self._index = {u.utt_id: i for i, u in enumerate(self.utterances)}
        if len(self._index) != len(self.utterances):
            raise ValueError("duplicate utterance ids")

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, utt_id: str) -> Utterance:
        try:
            return self.utterances[self._index[utt_id]]
        except KeyError:
            raise KeyError(f"unknown utterance id {utt_id!r}") from None

    def label(self, utt_id: str) -> int:
        self.label_reads += 1
        return self._labels[utt_id]

    def speakers(self) -> list[int]:
        return sorted({self.label(u.utt_id) for u in self.utterances})

    def subset(self, split: str) -> "SyntheticCorpus":
        """Utterances whose id carries the given split tag (``train`` or ``eval``)."""
        keep = [u for u in self.utterances if u.utt_id.split("-")[1] == split]
        return SyntheticCorpus(
            self.domain, keep, {u.utt_id: self._labels[u.utt_id] for u in keep}, self.config
        )

    @property
    def feature_dim(self) -> int:
        return self.utterances[0].segments.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256(self.domain.encode())
        for u in self.utterances:
            h.update(u.utt_id.encode())
            h.update(np.ascontiguousarray(u.segments).tobytes())
        return h.hexdigest()[:16]


def generate(cfg: DomainConfig) -> SyntheticCorpus:
    rng = np.random.default_rng(cfg.seed)
    f = cfg.feature_dim
    rank = cfg.speaker_rank or f
    a, b = cfg.shift_array(), cfg.offset_array()
    shifted = cfg.domain == "target"
    tag = "src" if cfg.domain == "source" else "tgt"

    splits = {"train": [], "eval": []}
    n_total = cfg.n_speakers + cfg.n_eval_speakers
    for spk in range(n_total):
        mean = np.zeros(f)
        mean[:rank] = cfg.speaker_spread * rng.normal(size=rank)
        split = "train" if spk < cfg.n_speakers else "eval"
        for _ in range(cfg.utts_per_speaker):
            centre = mean + cfg.utt_spread * rng.normal(size=f)
            segs = centre + cfg.seg_noise * rng.normal(size=(cfg.segs_per_utt, f))
            if shifted:
                segs = segs @ a.T + b
            splits[split].append((spk, segs))

    utterances, labels = [], {}
    for split, items in splits.items():
        order = rng.permutation(len(items))
        for idx, pos in enumerate(order):
            spk, segs = items[pos]
            uid = f"{tag}-{split}-{idx:05d}"
            utterances.append(Utterance(uid, segs))
            labels[uid] = spk
    return SyntheticCorpus(cfg.domain, utterances, labels, asdict(cfg))


@dataclass(frozen=True)
class Trial:
    label: int  # 1 target, 0 nontarget
    enroll_id: str
    test_id: str


@dataclass
class TrialList:
    trials: list[Trial] = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def ids(self) -> list[str]:
        return sorted({t.enroll_id for t in self.trials} | {t.test_id for t in self.trials})


def split_trials(corpus: SyntheticCorpus, n_target_pairs: int, n_nontarget_pairs: int, seed: int) -> TrialList:
    """Sample distinct utterance pairs; target pairs share a speaker, nontarget pairs do not."""
    rng = np.random.default_rng(seed)
    ids = [u.utt_id for u in corpus.utterances]
    labels = np.array([corpus.label(i) for i in ids])
    n = len(ids)
    ii, jj = np.triu_indices(n, k=1)
    same = labels[ii] == labels[jj]
    tgt_pool = np.flatnonzero(same)
    non_pool = np.flatnonzero(~same)
    if n_target_pairs > len(tgt_pool):
        raise ValueError(f"requested {n_target_pairs} target pairs, only {len(tgt_pool)} available")
    if n_nontarget_pairs > len(non_pool):
        raise ValueError(f"requested {n_nontarget_pairs} nontarget pairs, only {len(non_pool)} available")

    picks = [(1, p) for p in rng.choice(tgt_pool, n_target_pairs, replace=False)]
    picks += [(0, p) for p in rng.choice(non_pool, n_nontarget_pairs, replace=False)]
    order = rng.permutation(len(picks))
    trials = []
    for k in order:
        lab, p = picks[k]
        a, b = (ii[p], jj[p]) if rng.random() < 0.5 else (jj[p], ii[p])
        trials.append(Trial(lab, ids[a], ids[b]))
    return TrialList(trials)


# --- file formats -----------------------------------------------------------

def write_corpus(corpus: SyntheticCorpus, path, seed: int | None = None, manifest: bool = True) -> None:
    """One line per segment: ``utt_id<TAB>speaker<TAB>features``; JSON manifest alongside unless disabled."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in corpus.utterances:
            lab = corpus._labels[u.utt_id]
            for seg in u.segments:
                fh.write(f"{u.utt_id}\t{lab}\t{' '.join(repr(float(v)) for v in seg)}\n")
    if manifest:
        info = {"domain": corpus.domain, "seed": seed if seed is not None else corpus.config.get("seed"),
                "config": corpus.config}
        manifest_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def read_corpus(path, domain: str | None = None) -> SyntheticCorpus:
    path = Path(path)
    mpath = manifest_path(path)
    if domain is None and mpath.exists():
        domain = json.loads(mpath.read_text())["domain"]
    segs: dict[str, list] = {}
    labels: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            uid, lab, feats = parts
            segs.setdefault(uid, []).append([float(t) for t in feats.split()])
            labels[uid] = int(lab)
    utts = [Utterance(uid, np.array(rows, dtype=np.float64)) for uid, rows in segs.items()]
    if domain is None:
        domain = "target" if utts and utts[0].utt_id.startswith("tgt-") else "source"
    return SyntheticCorpus(domain, utts, labels)


def write_trials(trials: TrialList, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            fh.write(f"{t.label} {t.enroll_id} {t.test_id}\n")


def read_trials(path) -> TrialList:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected 'label enroll_id test_id' with label in {{0,1}}")
            out.append(Trial(int(parts[0]), parts[1], parts[2]))
    return TrialList(out)
