"""Contrastive and classification objectives with analytic gradients.

Every loss takes an ``(N, M, D)`` embedding batch (or logits / embeddings plus
class weights for the classification losses) and returns a ``LossOutput``
whose ``grads`` hold the gradient of the scalar value w.r.t. each input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numgrad import NumericError, l2_normalize, log_softmax, normalize_backward


@dataclass(frozen=True)
class LossConfig:
    margin_m: float = 4.0
    temperature_tau: float = 32.0
    lambda_weight: float = 1.0
    aam_margin_source: float = 0.2
    aam_margin_target: float = 0.15
    aam_scale: float = 32.0

    def __post_init__(self):
        if not self.margin_m > 0:
            raise ValueError("margin_m must be > 0")
        if not self.temperature_tau > 0:
            raise ValueError("temperature_tau must be > 0")
        if not self.lambda_weight >= 0:
            raise ValueError("lambda_weight must be >= 0")
        for name in ("aam_margin_source", "aam_margin_target"):
            v = getattr(self, name)
            if not 0 <= v < math.pi / 2:
                raise ValueError(f"{name} must lie in [0, pi/2)")
        if not self.aam_scale > 0:
            raise ValueError("aam_scale must be > 0")


@dataclass(frozen=True)
class EmbeddingBatch:
    """Segment embeddings x[j, i] for N utterances with M segments each."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"embedding batch must be N x M x D, got shape {x.shape}")
        n, m, _ = x.shape
        if n < 2:
            raise ValueError("need at least 2 utterances per batch (no negatives otherwise)")
        if m < 2:
            raise ValueError("need at least 2 segments per utterance (no positives otherwise)")
        if not np.all(np.isfinite(x)):
            raise NumericError("embedding batch contains NaN or Inf")
        if np.any(np.linalg.norm(x, axis=-1) == 0.0):
            raise NumericError("embedding batch contains an all-zero row")
        object.__setattr__(self, "x", x)

    @property
    def N(self) -> int:
        return self.x.shape[0]

    @property
    def M(self) -> int:
        return self.x.shape[1]

    @property
    def D(self) -> int:
        return self.x.shape[2]


@dataclass(frozen=True)
class CentroidSet:
    full: np.ndarray  # N x D
    leave_one_out: np.ndarray  # N x M x D


@dataclass(frozen=True)
class ScoreMatrix:
    proto_scores: np.ndarray  # N x N
    ge2e_scores: np.ndarray  # N x M x N


@dataclass
class LossOutput:
    kind: str
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    logits: np.ndarray | None = None


def _as_batch(batch) -> EmbeddingBatch:
    return batch if isinstance(batch, EmbeddingBatch) else EmbeddingBatch(batch)


def _others_mask(m: int) -> np.ndarray:
    return 1.0 - np.eye(m)


def centroids(batch) -> CentroidSet:
    """Full centroids over all M segments and leave-one-out centroids.

    The leave-one-out sum is formed explicitly over the other segments so
    that for M=2 it reproduces the other segment bit-for-bit.
    """
    x = _as_batch(batch).x
    m = x.shape[1]
    full = x.sum(axis=1) / m
    loo = np.einsum("im,jmd->jid", _others_mask(m), x) / (m - 1)
    return CentroidSet(full=full, leave_one_out=loo)


def _proto_parts(x):
    n, m, _ = x.shape
    queries = x[:, m - 1]
    support = x[:, : m - 1].sum(axis=1) / (m - 1)
    return queries, support


def scores(batch, tau: float) -> ScoreMatrix:
    x = _as_batch(batch).x
    q, c = _proto_parts(x)
    qn, _ = l2_normalize(q)
    cn, _ = l2_normalize(c)
    proto = tau * qn @ cn.T

    cs = centroids(x)
    xn, _ = l2_normalize(x)
    fn, _ = l2_normalize(cs.full)
    ln, _ = l2_normalize(cs.leave_one_out)
    ge2e = tau * np.einsum("jid,kd->jik", xn, fn)
    n = x.shape[0]
    ge2e[np.arange(n), :, np.arange(n)] = tau * np.sum(xn * ln, axis=-1)
    return ScoreMatrix(proto_scores=proto, ge2e_scores=ge2e)


def _check_pair_batch(batch) -> np.ndarray:
    x = _as_batch(batch).x
    if x.shape[1] != 2:
        raise ValueError(f"contrastive and triplet losses need M == 2, got M = {x.shape[1]}")
    return x


def hard_negatives(anchors: np.ndarray, others: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per anchor j, the closest ``others[k]`` with k != j (ties -> smallest k).

    Returns (indices, squared distances).
    """
    diff = anchors[:, None, :] - others[None, :, :]
    d2 = np.einsum("jkd,jkd->jk", diff, diff)
    masked = d2.copy()
    np.fill_diagonal(masked, np.inf)
    k = np.argmin(masked, axis=1)
    return k, d2[np.arange(len(k)), k]


def contrastive_loss(batch, cfg: LossConfig = LossConfig()) -> LossOutput:
    x = _check_pair_batch(batch)
    n = x.shape[0]
    a, p = x[:, 0], x[:, 1]

    pos_diff = a - p
    pos = np.sum(pos_diff**2, axis=1)
    k, neg = hard_negatives(a, p)
    hinge = cfg.margin_m - neg
    active = hinge > 0
    value = float(pos.sum() / n + np.where(active, hinge, 0.0).sum() / n)

    g = np.zeros_like(x)
    g[:, 0] += 2.0 * pos_diff / n
    g[:, 1] -= 2.0 * pos_diff / n
    neg_diff = a - p[k]
    coef = np.where(active, -2.0 / n, 0.0)[:, None]
    g[:, 0] += coef * neg_diff
    np.add.at(g[:, 1], k, -coef * neg_diff)
    return LossOutput("contrastive", value, {"embeddings": g})


def triplet_loss(batch, cfg: LossConfig = LossConfig()) -> LossOutput:
    x = _check_pair_batch(batch)
    n = x.shape[0]
    a, p = x[:, 0], x[:, 1]

    pos_diff = a - p
    pos = np.sum(pos_diff**2, axis=1)
    k, neg = hard_negatives(a, p)
    hinge = pos - neg + cfg.margin_m
    active = hinge > 0
    value = float(np.where(active, hinge, 0.0).sum() / n)

    w = np.where(active, 2.0 / n, 0.0)[:, None]
    neg_diff = a - p[k]
    g = np.zeros_like(x)
    # d/da (|a-p|^2 - |a-q|^2) = 2(q - p)
    g[:, 0] += w * (pos_diff - neg_diff)
    g[:, 1] -= w * pos_diff
    np.add.at(g[:, 1], k, w * neg_diff)
    return LossOutput("triplet", value, {"embeddings": g})


def proto_loss(batch, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Angular prototypical loss: last segment is the query, the rest form the prototype."""
    x = _as_batch(batch).x
    n, m, _ = x.shape
    tau = cfg.temperature_tau
    q, c = _proto_parts(x)
    qn, qnorm = l2_normalize(q)
    cn, cnorm = l2_normalize(c)
    s = tau * qn @ cn.T
    logp = log_softmax(s)
    value = float(-np.mean(np.diag(logp)))

    ds = (np.exp(logp) - np.eye(n)) / n
    dq = normalize_backward(qn, qnorm, tau * ds @ cn)
    dc = normalize_backward(cn, cnorm, tau * ds.T @ qn)
    g = np.zeros_like(x)
    g[:, m - 1] = dq
    g[:, : m - 1] += dc[:, None, :] / (m - 1)
    return LossOutput("proto", value, {"embeddings": g})


def ge2e_loss(batch, cfg: LossConfig = LossConfig()) -> LossOutput:
    """GE2E with a fixed temperature; the query is excluded from its own centroid."""
    x = _as_batch(batch).x
    n, m, _ = x.shape
    tau = cfg.temperature_tau
    cs = centroids(x)
    xn, xnorm = l2_normalize(x)
    fn, fnorm = l2_normalize(cs.full)
    ln, lnorm = l2_normalize(cs.leave_one_out)

    own = np.arange(n)
    s = tau * np.einsum("jid,kd->jik", xn, fn)
    s[own, :, own] = tau * np.sum(xn * ln, axis=-1)
    logp = log_softmax(s)
    value = float(-np.mean(logp[own, :, own]))

    target = np.zeros_like(s)
    target[own, :, own] = 1.0
    ds = (np.exp(logp) - target) / (n * m)
    d_self = ds[own, :, own]  # N x M
    d_cross = ds.copy()
    d_cross[own, :, own] = 0.0

    dxn = tau * (np.einsum("jik,kd->jid", d_cross, fn) + d_self[..., None] * ln)
    dfn = tau * np.einsum("jik,jid->kd", d_cross, xn)
    dln = tau * d_self[..., None] * xn

    g = normalize_backward(xn, xnorm, dxn)
    g += normalize_backward(fn, fnorm, dfn)[:, None, :] / m
    g += np.einsum("im,jid->jmd", _others_mask(m), normalize_backward(ln, lnorm, dln)) / (m - 1)
    return LossOutput("ge2e", value, {"embeddings": g})


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise ValueError(f"expected {n_rows} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if np.any((y < 0) | (y >= n_classes)):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def softmax_ce_loss(logits, labels) -> LossOutput:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("logits must be B x C")
    b, c = z.shape
    y = _check_labels(labels, b, c)
    logp = log_softmax(z)
    rows = np.arange(b)
    value = float(-np.mean(logp[rows, y]))
    g = np.exp(logp)
    g[rows, y] -= 1.0
    return LossOutput("softmax_ce", value, {"logits": g / b})


def aam_softmax_loss(embeddings, class_weights, labels, margin: float, scale: float) -> LossOutput:
    """Additive angular margin softmax: the true-class logit is scale*cos(theta + margin)."""
    e = np.asarray(embeddings, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    if e.ndim != 2 or w.ndim != 2 or e.shape[1] != w.shape[1]:
        raise ValueError(f"incompatible shapes {e.shape} and {w.shape}")
    b = e.shape[0]
    y = _check_labels(labels, b, w.shape[0])
    en, enorm = l2_normalize(e)
    wn, wnorm = l2_normalize(w)
    cos = en @ wn.T
    rows = np.arange(b)

    ct = cos[rows, y]
    sin_sq = np.maximum(1.0 - ct * ct, 0.0)
    phi = ct * math.cos(margin) - np.sqrt(sin_sq) * math.sin(margin)
    # d phi / d cos; the kink at theta = 0 is regularized by the floor
    dphi = math.cos(margin) + ct * math.sin(margin) / np.sqrt(np.maximum(sin_sq, 1e-12))

    logits = scale * cos
    logits[rows, y] = scale * phi
    logp = log_softmax(logits)
    value = float(-np.mean(logp[rows, y]))

    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dlogits /= b
    dcos = scale * dlogits
    dcos[rows, y] *= dphi
    de = normalize_backward(en, enorm, dcos @ wn)
    dw = normalize_backward(wn, wnorm, dcos.T @ en)
    return LossOutput("aam_softmax", value, {"embeddings": de, "class_weights": dw}, logits=logits)


def joint_loss(cla: LossOutput, cl: LossOutput, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Total loss = classification + lambda * contrastive; gradients namespaced by side."""
    if not (math.isfinite(cla.value) and math.isfinite(cl.value)):
        raise NumericError("joint loss inputs must be finite")
    lam = cfg.lambda_weight
    grads = {f"cla.{k}": v for k, v in cla.grads.items()}
    grads.update({f"cl.{k}": lam * v for k, v in cl.grads.items()})
    return LossOutput("joint", cla.value + lam * cl.value, grads)


CONTRASTIVE_OBJECTIVES = {
    "contrastive": contrastive_loss,
    "triplet": triplet_loss,
    "proto": proto_loss,
    "ge2e": ge2e_loss,
}
