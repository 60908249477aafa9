"""Toy feed-forward embedding extractor with classification heads.

Hidden layers use tanh; the last layer is linear. A single-layer stack
(``dims=(F, D)``) is therefore a plain affine projection.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "ssda-encoder"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    heads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")
        for name, h in self.heads.items():
            if h.ndim != 2 or h.shape[1] != self.embed_dim:
                raise ValueError(f"head {name!r} has shape {h.shape}, expected C x {self.embed_dim}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[0]

    def named(self) -> dict[str, np.ndarray]:
        """All parameters by name (views, not copies)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        for name, h in self.heads.items():
            out[f"head.{name}"] = h
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "EncoderParams":
        n_layers = sum(1 for k in arrays if k.startswith("w"))
        return cls(
            weights=[np.asarray(arrays[f"w{i}"], dtype=np.float64) for i in range(n_layers)],
            biases=[np.asarray(arrays[f"b{i}"], dtype=np.float64) for i in range(n_layers)],
            heads={k[5:]: np.asarray(v, dtype=np.float64) for k, v in arrays.items() if k.startswith("head.")},
        )

    def equals(self, other: "EncoderParams") -> bool:
        a, b = self.named(), other.named()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def init_params(seed: int, dims=(20, 32, 16), heads: dict[str, int] | None = None) -> EncoderParams:
    """LeCun-normal weights (std = 1/sqrt(fan_in)), zero biases; heads get std 1/sqrt(D)."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid dims {dims}")
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)) for fan_in, fan_out in zip(dims, dims[1:])]
    biases = [np.zeros(d) for d in dims[1:]]
    params = EncoderParams(weights, biases)
    for name, n_classes in (heads or {}).items():
        params.heads[name] = init_head(rng, n_classes, dims[-1])
    return params


def init_head(rng: np.random.Generator, n_classes: int, embed_dim: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(n_classes, embed_dim))


def clone_for_adaptation(params: EncoderParams) -> EncoderParams:
    return copy.deepcopy(params)


def _check_features(params: EncoderParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise ValueError(f"features of shape {x.shape} do not match encoder input dim {params.dims[0]}")
    return x


def forward(params: EncoderParams, features) -> np.ndarray:
    h = _check_features(params, features)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h


def forward_cached(params: EncoderParams, features) -> tuple[np.ndarray, list[np.ndarray]]:
    """Like ``forward`` but also returns the input of every layer for ``backward``."""
    h = _check_features(params, features)
    inputs = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h, inputs


def backward(params: EncoderParams, inputs: list[np.ndarray], d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the layer weights/biases given d loss / d embeddings."""
    grads = {}
    g = d_out
    for i in range(len(params.weights) - 1, -1, -1):
        grads[f"w{i}"] = g.T @ inputs[i]
        grads[f"b{i}"] = g.sum(axis=0)
        if i:
            # inputs[i] = tanh(pre-activation) of layer i-1
            g = (g @ params.weights[i]) * (1.0 - inputs[i] ** 2)
    return grads


def save_checkpoint(params: EncoderParams, path) -> None:
    """Text dump; floats use repr so the round trip is bit-exact."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}", "dims " + " ".join(map(str, params.dims))]
    for name, arr in params.named().items():
        lines.append(f"array {name} " + " ".join(map(str, arr.shape)))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> EncoderParams:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a v{CHECKPOINT_VERSION} encoder checkpoint")
    dims = tuple(int(t) for t in lines[1].split()[1:])
    arrays = {}
    for header, body in zip(lines[2::2], lines[3::2]):
        parts = header.split()
        if parts[0] != "array":
            raise ValueError(f"{path}: malformed array header {header!r}")
        shape = tuple(int(t) for t in parts[2:])
        values = np.array([float(t) for t in body.split()], dtype=np.float64)
        arrays[parts[1]] = values.reshape(shape)
    params = EncoderParams.from_named(arrays)
    if params.dims != dims:
        raise ValueError(f"{path}: dims header {dims} disagrees with arrays {params.dims}")
    return params
