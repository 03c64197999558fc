"""Cross-attention enrichment of concept embeddings with image tokens.

One single-head attention block followed by a two-layer feed-forward,
both residual and without any normalization layers:

    attended = concepts + softmax(Q K^T / sqrt(dim)) V_proj
    output   = attended + relu(attended W1^T + b1) W2^T + b2

Queries come from the concepts, keys and values from the image tokens,
so each concept is refreshed with whatever visual context it attends
to while a zeroed value/FFN path leaves it untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .tensorio import (
    DataError,
    Tensor,
    WEIGHT_MANIFEST_KEYS,
    parse_manifest,
    read_tensor,
    write_manifest,
    write_tensor,
)


@dataclass(frozen=True)
class AttentionWeights:
    w_q: np.ndarray  # (dim, dim)
    w_k: np.ndarray  # (dim, dim)
    w_v: np.ndarray  # (dim, dim)
    ffn_w1: np.ndarray  # (hidden, dim)
    ffn_b1: np.ndarray  # (hidden,)
    ffn_w2: np.ndarray  # (dim, hidden)
    ffn_b2: np.ndarray  # (dim,)

    def __post_init__(self) -> None:
        for name in ("w_q", "w_k", "w_v", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite element in {name}")
            object.__setattr__(self, name, arr)
        dim, hidden = self.dim, self.hidden
        expected = {
            "w_q": (dim, dim),
            "w_k": (dim, dim),
            "w_v": (dim, dim),
            "ffn_w1": (hidden, dim),
            "ffn_b1": (hidden,),
            "ffn_w2": (dim, hidden),
            "ffn_b2": (dim,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise DataError(f"weight {name} has shape {actual}, expected {shape}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def hidden(self) -> int:
        return self.ffn_w1.shape[0]


def random_weights(dim: int, seed: int, hidden: int | None = None) -> AttentionWeights:
    """Seeded uniform init in [-1/sqrt(dim), 1/sqrt(dim)], hidden defaults to 4*dim."""
    if hidden is None:
        hidden = 4 * dim
    gen = rng.substream(seed, rng.WEIGHT_STREAM)
    bound = 1.0 / np.sqrt(dim)

    def draw(*shape: int) -> np.ndarray:
        return rng.uniform(gen, -bound, bound, shape)

    return AttentionWeights(
        w_q=draw(dim, dim),
        w_k=draw(dim, dim),
        w_v=draw(dim, dim),
        ffn_w1=draw(hidden, dim),
        ffn_b1=draw(hidden),
        ffn_w2=draw(dim, hidden),
        ffn_b2=draw(dim),
    )


def zero_weights(dim: int, hidden: int | None = None) -> AttentionWeights:
    if hidden is None:
        hidden = 4 * dim
    return AttentionWeights(
        w_q=np.zeros((dim, dim)),
        w_k=np.zeros((dim, dim)),
        w_v=np.zeros((dim, dim)),
        ffn_w1=np.zeros((hidden, dim)),
        ffn_b1=np.zeros(hidden),
        ffn_w2=np.zeros((dim, hidden)),
        ffn_b2=np.zeros(dim),
    )


def load_weights(manifest_path: str | Path) -> AttentionWeights:
    """Read one tensor file per matrix, named by a ``w_q = path`` manifest."""
    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path, WEIGHT_MANIFEST_KEYS)
    missing = WEIGHT_MANIFEST_KEYS - entries.keys()
    if missing:
        raise DataError(f"{manifest_path}: missing manifest keys {sorted(missing)}")
    base = manifest_path.parent
    arrays = {key: read_tensor(base / entries[key]).values for key in WEIGHT_MANIFEST_KEYS}
    return AttentionWeights(**arrays)


def save_weights(weights: AttentionWeights, out_dir: str | Path, stem: str = "weights") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(WEIGHT_MANIFEST_KEYS):
        filename = f"{stem}_{name}.mdet"
        write_tensor(Tensor(getattr(weights, name)), out_dir / filename)
        entries[name] = filename
    manifest = out_dir / f"{stem}.manifest"
    write_manifest(entries, manifest)
    return manifest


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def augment_concepts(
    concepts: np.ndarray, tokens: np.ndarray, weights: AttentionWeights
) -> np.ndarray:
    """Return enriched concept embeddings, float64, same shape as ``concepts``."""
    concepts = np.asarray(concepts, dtype=np.float64)
    tokens = np.asarray(tokens, dtype=np.float64)
    if concepts.ndim != 2 or tokens.ndim != 2:
        raise ValueError("concepts and tokens must be rank-2 arrays")
    if tokens.shape[0] == 0:
        raise ValueError("empty image token set")
    dim = weights.dim
    if concepts.shape[1] != dim or tokens.shape[1] != dim:
        raise ValueError(
            f"embedding dim mismatch: concepts {concepts.shape[1]}, "
            f"tokens {tokens.shape[1]}, weights {dim}"
        )
    if concepts.shape[0] == 0:
        return concepts.copy()

    queries = concepts @ weights.w_q.T
    keys = tokens @ weights.w_k.T
    values = tokens @ weights.w_v.T
    attention = _softmax_rows(queries @ keys.T / np.sqrt(dim))
    checksum = attention.sum(axis=1)
    if not np.allclose(checksum, 1.0, atol=1e-9):
        raise RuntimeError("attention rows drifted from sum 1")
    attended = concepts + attention @ values
    hidden = np.maximum(attended @ weights.ffn_w1.T + weights.ffn_b1, 0.0)
    return attended + hidden @ weights.ffn_w2.T + weights.ffn_b2
