"""Iterative cross-modal set matching and its ranking loss.

Two embedding sets, proposals E and concepts T, score each other over a
fixed number of attention rounds. Each round reconstructs one side from
the *original* other side using temperature-scaled cosine attention,
then folds the reconstruction back into the query memory:

    weights = softmax(temperature * cos(query, context))   over context
    recon   = weights @ context
    memory  = normalize(memory + recon)

A round contributes the mean cosine between original proposals and
their reconstructions plus the symmetric concept-side term, so the
total over k rounds lives in [-2k, 2k]. The batch loss is a bidirectional
hinge against the hardest negative in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MatchParams:
    steps: int = 3
    margin: float = 0.2
    temperature: float = 10.0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.margin < 0.0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _as_set(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"empty modality: {name} must be a non-empty rank-2 array")
    return arr


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = np.linalg.norm(a, axis=1)
    bn = np.linalg.norm(b, axis=1)
    denom = np.outer(an, bn)
    dots = a @ b.T
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
    return np.clip(cos, -1.0, 1.0)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine between corresponding rows of two equally shaped arrays."""
    an = np.linalg.norm(a, axis=1)
    bn = np.linalg.norm(b, axis=1)
    denom = an * bn
    dots = np.sum(a * b, axis=1)
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
    return np.clip(cos, -1.0, 1.0)


def attention_step(
    queries: np.ndarray, context: np.ndarray, temperature: float
) -> tuple[np.ndarray, np.ndarray]:
    """One attention round; returns (reconstructions, updated queries)."""
    sims = _cosine_matrix(queries, context)
    scores = temperature * sims
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    weights /= weights.sum(axis=1, keepdims=True)
    recon = weights @ context
    updated = _unit_rows(queries + recon)
    return recon, updated


def set_similarity(proposals: np.ndarray, concepts: np.ndarray, params: MatchParams) -> float:
    """Total matching score of one (proposal set, concept set) pair."""
    originals_e = _as_set(proposals, "proposals")
    originals_t = _as_set(concepts, "concepts")
    if originals_e.shape[1] != originals_t.shape[1]:
        raise ValueError(
            f"dim mismatch: proposals {originals_e.shape[1]} vs concepts {originals_t.shape[1]}"
        )
    memory_e = originals_e.copy()
    memory_t = originals_t.copy()
    total = 0.0
    for _ in range(params.steps):
        recon_e, memory_e = attention_step(memory_e, originals_t, params.temperature)
        recon_t, memory_t = attention_step(memory_t, originals_e, params.temperature)
        total += float(np.mean(_cosine_rows(originals_e, recon_e)))
        total += float(np.mean(_cosine_rows(recon_t, originals_t)))
    return total


def pairwise_similarity(
    proposal_sets: Sequence[np.ndarray],
    concept_sets: Sequence[np.ndarray],
    params: MatchParams,
) -> np.ndarray:
    """S[i, j] = set_similarity(proposals of i, concepts of j)."""
    size = len(proposal_sets)
    if len(concept_sets) != size:
        raise ValueError("proposal and concept batches differ in length")
    matrix = np.zeros((size, size), dtype=np.float64)
    for i in range(size):
        for j in range(size):
            matrix[i, j] = set_similarity(proposal_sets[i], concept_sets[j], params)
    return matrix


def loss_from_similarity(matrix: np.ndarray, margin: float) -> float:
    """Hinge loss against hardest in-batch negatives; 0 for a 1x1 matrix."""
    size = matrix.shape[0]
    if size <= 1:
        return 0.0
    loss = 0.0
    for i in range(size):
        others = [j for j in range(size) if j != i]
        hardest_concept = max(matrix[i, j] for j in others)
        hardest_proposal = max(matrix[j, i] for j in others)
        loss += max(0.0, margin - matrix[i, i] + hardest_concept)
        loss += max(0.0, margin - matrix[i, i] + hardest_proposal)
    return loss


def matching_loss(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]], params: MatchParams
) -> float:
    """Hardest-negative bidirectional hinge loss over a batch; 0 for B = 1."""
    proposals = [pair[0] for pair in pairs]
    concepts = [pair[1] for pair in pairs]
    matrix = pairwise_similarity(proposals, concepts, params)
    return loss_from_similarity(matrix, params.margin)
