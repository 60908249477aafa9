"""Small numeric helpers shared by the losses, plus a finite-difference oracle.

Arrays are plain float64 numpy arrays; ``as_tensor`` is the validating
constructor used at module boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class NumericError(ValueError):
    """Raised for invalid numeric input (non-finite, zero norm, bad shape)."""


def as_tensor(data, shape=None) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    return arr


@dataclass
class GradResult:
    """A scalar value together with gradients keyed by parameter name."""

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def check(self, params: Mapping[str, np.ndarray]) -> None:
        for name, p in params.items():
            if name not in self.grads:
                raise NumericError(f"missing gradient for {name!r}")
            g = self.grads[name]
            if g.shape != np.shape(p):
                raise NumericError(f"gradient shape {g.shape} != param shape {np.shape(p)} for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NumericError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def sq_l2_dist(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NumericError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d.ravel(), d.ravel()))


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize along the last axis; returns (unit vectors, norms)."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("cannot normalize a zero-norm vector")
    return x / norms, norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``x/|x|`` back to ``x``."""
    proj = np.sum(unit * d_unit, axis=-1, keepdims=True)
    return (d_unit - unit * proj) / norms


def log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def finite_diff_grad(
    f: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-4,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` w.r.t. every entry of every parameter.

    ``f`` receives a dict of arrays (perturbed copies) and returns a scalar.
    """
    if not h > 0:
        raise NumericError("step h must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out: dict[str, np.ndarray] = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(work))
            flat[i] = orig - h
            fm = float(f(work))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = [int(t) for t in np.unravel_index(i, arr.shape)]
                raise NumericError(f"non-finite function value probing {name}{idx}")
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def max_rel_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray], floor: float = 1e-8) -> float:
    """max |a - n| / (|n| + floor) over all coordinates of all parameters."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        err = np.abs(a - n) / (np.abs(n) + floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
