"""Proposal mining: pair caption concepts with the proposals that show them.

The pipeline per image, over precomputed embeddings only:

1. Score every (concept, proposal) cell with objectness-weighted cosine
   similarity, optionally after enriching the concepts with image tokens.
2. Drop proposals whose similarity-entropy over the concepts is strictly
   above that of the whole-image pseudo-proposal (a proposal that is no
   more specific than the full image explains nothing).
3. Keep the top-k proposals per concept, ties to the lower index.
4. Drop concepts whose best surviving match scores strictly below the
   concept's similarity to the image itself.
5. Repeatedly merge the highest-overlap pair of a concept's proposals
   while their IoU reaches ``theta_iou``: boxes take the enclosing box,
   embeddings the objectness-weighted mean renormalized to unit length,
   objectness the max of the pair.

Emitted sets order concepts by id and proposals by score descending,
then by smallest source index. Scores are recomputed once after
merging so merged entries rank by what they actually contain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AttentionWeights, augment_concepts
from .geometry import BBox, enclose, iou
from .tensorio import (
    DataError,
    ImageRecord,
    Tensor,
    Vocabulary,
    read_jsonl,
    read_tensor,
    write_jsonl,
    write_tensor,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningParams:
    theta_iou: float = 0.6
    top_k: int = 3
    use_augmentation: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_iou <= 1.0:
            raise ValueError(f"theta_iou {self.theta_iou} outside (0, 1]")
        if self.top_k < 1:
            raise ValueError(f"top_k must be at least 1, got {self.top_k}")


def unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v
    return v / norm


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity with zero vectors scoring 0, clamped to [-1, 1]."""
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    value = float(np.dot(x, y) / (nx * ny))
    return min(1.0, max(-1.0, value))


def weighted_similarity(concept: np.ndarray, proposal: np.ndarray, objectness: float) -> float:
    """Objectness-weighted cosine, the cell score of the mining matrix."""
    return cosine(concept, proposal) * objectness


def score_matrix(
    concepts: np.ndarray, proposals: np.ndarray, objectness: np.ndarray
) -> np.ndarray:
    """All (concept, proposal) scores at once; rows follow ``concepts``."""
    concepts = np.asarray(concepts, dtype=np.float64)
    proposals = np.asarray(proposals, dtype=np.float64)
    objectness = np.asarray(objectness, dtype=np.float64)
    cn = np.linalg.norm(concepts, axis=1)
    pn = np.linalg.norm(proposals, axis=1)
    dots = concepts @ proposals.T
    denom = np.outer(cn, pn)
    cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
    np.clip(cos, -1.0, 1.0, out=cos)
    return cos * objectness[None, :]


def similarity_entropy(scores: Sequence[float] | np.ndarray) -> float:
    """Entropy (natural log) of the softmax over a score column."""
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("scores must be a non-empty vector")
    p = np.exp(x - x.max())
    p /= p.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    # + 0.0 folds the -0.0 of the single-concept case into plain 0.0
    return float(-np.sum(terms)) + 0.0


def entropy_filter(sc: np.ndarray, sc_image: np.ndarray) -> list[int]:
    """Columns whose entropy does not exceed the image column's."""
    image_entropy = similarity_entropy(sc_image)
    return [m for m in range(sc.shape[1]) if similarity_entropy(sc[:, m]) <= image_entropy]


def top_k_matches(sc: np.ndarray, surviving: Sequence[int], k: int) -> list[list[int]]:
    """Per concept, the k best surviving columns; ties to the lower index."""
    matches = []
    for n in range(sc.shape[0]):
        ordered = sorted(surviving, key=lambda m: (-sc[n, m], m))
        matches.append(ordered[:k])
    return matches


def image_anchor_filter(
    matches: Sequence[Sequence[int]], sc: np.ndarray, sc_image: np.ndarray
) -> list[int]:
    """Concept rows whose best match is at least the image-level score."""
    kept = []
    for n, cols in enumerate(matches):
        if not cols:
            continue
        if max(sc[n, m] for m in cols) >= sc_image[n]:
            kept.append(n)
    return kept


@dataclass
class MinedProposal:
    concept_id: int
    box: BBox
    objectness: float
    embedding: np.ndarray
    score: float
    merged: bool
    index: int  # smallest source proposal index, used for tie-breaks


@dataclass(frozen=True)
class MinedConcept:
    concept_id: int
    embedding: np.ndarray  # the embedding used for matching


@dataclass(frozen=True)
class MinedSet:
    image_id: str
    concepts: tuple[MinedConcept, ...]  # ascending concept_id
    proposals: tuple[MinedProposal, ...]  # grouped in the same concept order

    def counts(self) -> dict[int, int]:
        out = {concept.concept_id: 0 for concept in self.concepts}
        for item in self.proposals:
            out[item.concept_id] += 1
        return out


def merge_fragments(items: Sequence[MinedProposal], theta_iou: float) -> list[MinedProposal]:
    """Greedy pair merging until no remaining pair overlaps at theta_iou.

    The highest-IoU pair goes first; exact ties resolve to the
    lexicographically smallest (index, index) pair. Each merge removes
    one entry, so at most len(items) - 1 merges happen.
    """
    items = list(items)
    while len(items) >= 2:
        best_key = None
        best_pair = None
        for a in range(len(items)):
            for b in range(a + 1, len(items)):
                overlap = iou(items[a].box, items[b].box)
                if overlap < theta_iou:
                    continue
                lo, hi = sorted((items[a].index, items[b].index))
                key = (-overlap, lo, hi)
                if best_key is None or key < best_key:
                    best_key = key
                    best_pair = (a, b)
        if best_pair is None:
            break
        a, b = best_pair
        first, second = items[a], items[b]
        blended = first.objectness * first.embedding + second.objectness * second.embedding
        merged = MinedProposal(
            concept_id=first.concept_id,
            box=enclose(first.box, second.box),
            objectness=max(first.objectness, second.objectness),
            embedding=unit(blended),
            score=0.0,
            merged=True,
            index=min(first.index, second.index),
        )
        items = [item for pos, item in enumerate(items) if pos not in (a, b)]
        items.append(merged)
    return items


def mine_image(
    record: ImageRecord,
    vocabulary: Vocabulary,
    weights: AttentionWeights | None = None,
    params: MiningParams | None = None,
) -> MinedSet:
    """Run the full per-image pipeline and assemble an ordered MinedSet."""
    if params is None:
        params = MiningParams()
    empty = MinedSet(image_id=record.image_id, concepts=(), proposals=())
    concept_ids = list(record.caption_concepts)
    if not concept_ids:
        logger.warning("image %s has no caption concepts, mining nothing", record.image_id)
        return empty

    concept_emb = np.stack(
        [vocabulary.embedding(cid) for cid in concept_ids]
    ).astype(np.float64)
    if params.use_augmentation:
        if weights is None:
            raise ValueError("use_augmentation requires attention weights")
        concept_emb = augment_concepts(concept_emb, record.image_tokens, weights)

    if not record.proposals:
        return empty

    proposal_emb = record.proposal_embeddings().astype(np.float64)
    objectness = record.objectness()
    sc = score_matrix(concept_emb, proposal_emb, objectness)
    # The whole image acts as a pseudo-proposal: global token, objectness 1.
    # Its box would be the full frame but never leaves this function.
    global_token = record.image_tokens[0].astype(np.float64)
    sc_image = np.array([cosine(t, global_token) for t in concept_emb])

    surviving = entropy_filter(sc, sc_image)
    matches = top_k_matches(sc, surviving, params.top_k)
    kept_rows = image_anchor_filter(matches, sc, sc_image)

    concepts_out: list[MinedConcept] = []
    proposals_out: list[MinedProposal] = []
    for n in sorted(kept_rows, key=lambda row: concept_ids[row]):
        cid = concept_ids[n]
        items = [
            MinedProposal(
                concept_id=cid,
                box=record.proposals[m].box,
                objectness=record.proposals[m].objectness,
                embedding=proposal_emb[m].copy(),
                score=0.0,
                merged=False,
                index=m,
            )
            for m in matches[n]
        ]
        items = merge_fragments(items, params.theta_iou)
        for item in items:
            item.score = weighted_similarity(concept_emb[n], item.embedding, item.objectness)
        items.sort(key=lambda item: (-item.score, item.index))
        concepts_out.append(MinedConcept(concept_id=cid, embedding=concept_emb[n].copy()))
        proposals_out.extend(items)
    return MinedSet(
        image_id=record.image_id,
        concepts=tuple(concepts_out),
        proposals=tuple(proposals_out),
    )


PAIR_FILE = "mined.jsonl"
PAIR_TENSOR = "mined.mdet"
CONCEPT_FILE = "mined_concepts.jsonl"
CONCEPT_TENSOR = "mined_concepts.mdet"


def write_mined_sets(sets: Sequence[MinedSet], out_dir: str | Path, dim: int) -> tuple[int, int]:
    """Write pair and concept JSONL plus their embedding tensors.

    ``embedding_row`` in each line indexes the tensor written next to it;
    merged embeddings exist nowhere else, so the rows are emitted fresh.
    Returns (pair lines, concept lines).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pair_rows = []
    pair_vectors = []
    concept_rows = []
    concept_vectors = []
    for mined in sets:
        for item in mined.proposals:
            pair_rows.append(
                {
                    "image_id": mined.image_id,
                    "concept_id": item.concept_id,
                    "box": list(item.box.as_tuple()),
                    "objectness": item.objectness,
                    "embedding_row": len(pair_vectors),
                    "merged": item.merged,
                }
            )
            pair_vectors.append(np.asarray(item.embedding, dtype=np.float32))
        for concept in mined.concepts:
            concept_rows.append(
                {
                    "image_id": mined.image_id,
                    "concept_id": concept.concept_id,
                    "embedding_row": len(concept_vectors),
                }
            )
            concept_vectors.append(np.asarray(concept.embedding, dtype=np.float32))
    write_jsonl(pair_rows, out_dir / PAIR_FILE)
    write_jsonl(concept_rows, out_dir / CONCEPT_FILE)
    pair_matrix = (
        np.stack(pair_vectors) if pair_vectors else np.zeros((0, dim), dtype=np.float32)
    )
    concept_matrix = (
        np.stack(concept_vectors) if concept_vectors else np.zeros((0, dim), dtype=np.float32)
    )
    write_tensor(Tensor(pair_matrix), out_dir / PAIR_TENSOR)
    write_tensor(Tensor(concept_matrix), out_dir / CONCEPT_TENSOR)
    return len(pair_rows), len(concept_rows)


def read_mined_sets(out_dir: str | Path) -> list[MinedSet]:
    """Load sets back in file order; scores are not persisted."""
    out_dir = Path(out_dir)
    pair_tensor = read_tensor(out_dir / PAIR_TENSOR)
    concept_tensor = read_tensor(out_dir / CONCEPT_TENSOR)
    proposals_by_image: dict[str, list[MinedProposal]] = {}
    order: list[str] = []
    for row in read_jsonl(out_dir / PAIR_FILE):
        image_id = str(row["image_id"])
        if image_id not in proposals_by_image:
            proposals_by_image[image_id] = []
            order.append(image_id)
        entry = proposals_by_image[image_id]
        embedding_row = int(row["embedding_row"])
        if not 0 <= embedding_row < pair_tensor.shape[0]:
            raise DataError(f"dangling embedding_row {embedding_row} in {PAIR_FILE}")
        entry.append(
            MinedProposal(
                concept_id=int(row["concept_id"]),
                box=BBox(*(float(v) for v in row["box"])),
                objectness=float(row["objectness"]),
                embedding=pair_tensor.values[embedding_row].astype(np.float64),
                score=0.0,
                merged=bool(row["merged"]),
                index=len(entry),
            )
        )
    concepts_by_image: dict[str, list[MinedConcept]] = {}
    for row in read_jsonl(out_dir / CONCEPT_FILE):
        image_id = str(row["image_id"])
        embedding_row = int(row["embedding_row"])
        if not 0 <= embedding_row < concept_tensor.shape[0]:
            raise DataError(f"dangling embedding_row {embedding_row} in {CONCEPT_FILE}")
        concepts_by_image.setdefault(image_id, []).append(
            MinedConcept(
                concept_id=int(row["concept_id"]),
                embedding=concept_tensor.values[embedding_row].astype(np.float64),
            )
        )
    sets = []
    for image_id in order:
        sets.append(
            MinedSet(
                image_id=image_id,
                concepts=tuple(concepts_by_image.get(image_id, [])),
                proposals=tuple(proposals_by_image[image_id]),
            )
        )
    return sets
