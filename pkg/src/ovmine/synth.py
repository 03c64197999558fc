"""Synthetic worlds with known ground truth for end-to-end checks.

A world is a reproducible function of its config. Concepts become unit
embeddings with a guaranteed minimum pairwise angle (an orthonormal
frame whenever the concept count fits the dimension). Every image then
draws from its own substream:

* object concepts, sampled without replacement and weighted so base
  concepts appear ``frequency_ratio`` times as often as novel ones;
* extra caption-only context concepts, which name things the image
  does not contain and therefore must be dropped by the miner;
* one proposal per object, embedded as the concept plus Gaussian noise
  renormalized to unit length, with objectness near one;
* optionally, two or three fragment proposals replacing an object's
  box. Fragments share the parent's noisy embedding, score slightly
  lower objectness, overlap each other with IoU >= 0.6, and enclose
  back to exactly the parent box;
* distractor proposals with random embeddings and mid objectness;
* a single global image token mixing the object concepts (weight 0.5),
  each context concept (weight 0.2) and a background direction chosen
  orthogonal to the concept span. The mix keeps the token informative
  enough to beat distractor entropy while staying below any real
  match, which is what the entropy and image-anchor filters need.

The world also emits a deliberately biased raw score matrix over its
true objects (one row per object, column j = concept j): scaled cosine
plus a constant inflation added to every base-concept column. That is
the scorer the calibration stage is expected to flatten.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import rng
from .geometry import BBox, iou
from .mining import unit
from .tensorio import DataError, Tensor, read_jsonl, write_jsonl, write_manifest, write_tensor

CANVAS = 1000.0
BOX_SIDE = (80.0, 300.0)
OBJECT_OBJECTNESS = (0.9, 1.0)
FRAGMENT_OBJECTNESS = (0.8, 0.95)
DISTRACTOR_OBJECTNESS = (0.4, 0.6)
TOKEN_OBJECT_WEIGHT = 0.5
TOKEN_CONTEXT_WEIGHT = 0.2
SCORE_SCALE = 20.0
SCORE_INFLATION = 9.0

MANIFEST_NAME = "world.manifest"
TRUTH_NAME = "truth.jsonl"
SCORES_NAME = "scores_raw.mdet"


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 42
    dim: int = 64
    base_concepts: int = 14
    novel_concepts: int = 6
    images: int = 200
    objects_per_image: int = 1
    distractors_per_image: int = 5
    context_concepts: int = 3
    fragment_rate: float = 0.3
    noise_sigma: float = 0.1
    frequency_ratio: float = 3.0
    min_angle_deg: float = 75.0

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"dim must be at least 2, got {self.dim}")
        if self.base_concepts < 1 or self.novel_concepts < 1:
            raise ValueError("need at least one base and one novel concept")
        if self.images < 1:
            raise ValueError(f"images must be positive, got {self.images}")
        if self.objects_per_image < 1:
            raise ValueError("objects_per_image must be positive")
        if self.distractors_per_image < 0 or self.context_concepts < 0:
            raise ValueError("counts must be non-negative")
        if not 0.0 <= self.fragment_rate <= 1.0:
            raise ValueError(f"fragment_rate {self.fragment_rate} outside [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.frequency_ratio <= 0.0:
            raise ValueError("frequency_ratio must be positive")
        if not 0.0 < self.min_angle_deg <= 90.0:
            raise ValueError("min_angle_deg must be in (0, 90]")
        total = self.objects_per_image + self.context_concepts
        if total > self.base_concepts + self.novel_concepts:
            raise ValueError("per-image concept draw exceeds the vocabulary")

    @property
    def concept_count(self) -> int:
        return self.base_concepts + self.novel_concepts


@dataclass(frozen=True)
class TrueObject:
    concept_id: int
    box: BBox


@dataclass(frozen=True)
class ProposalOrigin:
    kind: str  # "object" | "fragment" | "distractor"
    object_index: int | None


@dataclass(frozen=True)
class ImageTruth:
    image_id: str
    objects: tuple[TrueObject, ...]
    origins: tuple[ProposalOrigin, ...]


@dataclass(frozen=True)
class GroundTruth:
    images: tuple[ImageTruth, ...]

    def by_id(self) -> dict[str, ImageTruth]:
        return {img.image_id: img for img in self.images}

    def object_count(self) -> int:
        return sum(len(img.objects) for img in self.images)


def image_name(index: int) -> str:
    return f"img_{index:05d}"


def concept_embeddings(config: WorldConfig) -> np.ndarray:
    """Unit concept vectors with pairwise angle >= config.min_angle_deg."""
    gen = rng.substream(config.seed, rng.CONCEPT_STREAM)
    count, dim = config.concept_count, config.dim
    if count <= dim:
        # orthonormal frame: every pairwise angle is exactly 90 degrees
        raw = rng.gaussian(gen, (dim, count))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.where(np.diag(r) == 0.0, 1.0, np.diag(r)))
        return np.ascontiguousarray(q[:, :count].T)
    max_cos = np.cos(np.deg2rad(config.min_angle_deg))
    rows: list[np.ndarray] = []
    for _ in range(count):
        for _attempt in range(1000):
            candidate = unit(rng.gaussian(gen, (dim,)))
            if all(abs(float(np.dot(candidate, other))) <= max_cos for other in rows):
                rows.append(candidate)
                break
        else:
            raise ValueError(
                f"cannot satisfy min angle {config.min_angle_deg} deg for "
                f"{count} concepts in dim {dim}"
            )
    return np.stack(rows)


def _weighted_sample(gen, ids: list[int], weights: list[float], count: int) -> list[int]:
    """Sequential weighted draws without replacement."""
    ids = list(ids)
    weights = list(weights)
    picked = []
    for _ in range(min(count, len(ids))):
        total = sum(weights)
        u = gen.random() * total
        acc = 0.0
        choice = len(ids) - 1
        for pos, w in enumerate(weights):
            acc += w
            if u < acc:
                choice = pos
                break
        picked.append(ids.pop(choice))
        weights.pop(choice)
    return picked


def _random_box(gen) -> BBox:
    w = rng.uniform(gen, *BOX_SIDE)
    h = rng.uniform(gen, *BOX_SIDE)
    x1 = rng.uniform(gen, 0.0, CANVAS - w)
    y1 = rng.uniform(gen, 0.0, CANVAS - h)
    return BBox(x1, y1, x1 + w, y1 + h)


def fragment_boxes(box: BBox, count: int) -> list[BBox]:
    """Sub-boxes with pairwise IoU >= 0.6 whose enclosure is the parent."""
    w = box.x2 - box.x1
    h = box.y2 - box.y1
    first = BBox(box.x1, box.y1, box.x1 + 0.9 * w, box.y1 + 0.9 * h)
    second = BBox(box.x1 + 0.1 * w, box.y1 + 0.1 * h, box.x2, box.y2)
    if count == 2:
        return [first, second]
    third = BBox(
        box.x1 + 0.05 * w, box.y1 + 0.05 * h, box.x2 - 0.05 * w, box.y2 - 0.05 * h
    )
    return [first, second, third]


def _orthogonal_background(gen, concepts: np.ndarray) -> np.ndarray:
    direction = rng.gaussian(gen, (concepts.shape[1],))
    for row in concepts:
        direction = direction - float(np.dot(direction, row)) * row
    normalized = unit(direction)
    if np.linalg.norm(normalized) == 0.0:
        normalized = unit(rng.gaussian(gen, (concepts.shape[1],)))
    return normalized


def _image_token(
    object_concepts: np.ndarray, context_concepts: np.ndarray, background: np.ndarray
) -> np.ndarray:
    mix = TOKEN_OBJECT_WEIGHT * object_concepts.mean(axis=0)
    if context_concepts.shape[0]:
        mix = mix + TOKEN_CONTEXT_WEIGHT * context_concepts.sum(axis=0)
    leftover = max(0.04, 1.0 - float(np.dot(mix, mix)))
    return unit(mix + np.sqrt(leftover) * background)


@dataclass(frozen=True)
class _ImagePayload:
    index: int
    token: np.ndarray
    caption: tuple[int, ...]
    boxes: tuple[tuple[float, float, float, float], ...]
    objectness: tuple[float, ...]
    embeddings: np.ndarray  # (proposals, dim)
    origins: tuple[ProposalOrigin, ...]
    objects: tuple[TrueObject, ...]
    object_embeddings: np.ndarray  # (objects, dim), the shared noisy vectors


def _build_image(args: tuple[WorldConfig, np.ndarray, int]) -> _ImagePayload:
    config, concepts, index = args
    gen = rng.substream(config.seed, index)
    all_ids = list(range(config.concept_count))
    weights = [
        config.frequency_ratio if cid < config.base_concepts else 1.0 for cid in all_ids
    ]
    object_ids = _weighted_sample(gen, all_ids, weights, config.objects_per_image)
    remaining = [cid for cid in all_ids if cid not in object_ids]
    remaining_weights = [weights[cid] for cid in remaining]
    context_ids = _weighted_sample(gen, remaining, remaining_weights, config.context_concepts)

    background = _orthogonal_background(gen, concepts)
    token = _image_token(concepts[object_ids], concepts[context_ids], background)

    boxes: list[tuple[float, float, float, float]] = []
    objectness: list[float] = []
    vectors: list[np.ndarray] = []
    origins: list[ProposalOrigin] = []
    objects: list[TrueObject] = []
    object_vectors: list[np.ndarray] = []
    for obj_pos, cid in enumerate(object_ids):
        box = _random_box(gen)
        noisy = unit(concepts[cid] + config.noise_sigma * rng.gaussian(gen, (config.dim,)))
        objects.append(TrueObject(concept_id=cid, box=box))
        object_vectors.append(noisy)
        fragmented = gen.random() < config.fragment_rate
        if fragmented:
            count = 2 if gen.random() < 0.5 else 3
            for part in fragment_boxes(box, count):
                boxes.append(part.as_tuple())
                objectness.append(float(rng.uniform(gen, *FRAGMENT_OBJECTNESS)))
                vectors.append(noisy)
                origins.append(ProposalOrigin(kind="fragment", object_index=obj_pos))
        else:
            boxes.append(box.as_tuple())
            objectness.append(float(rng.uniform(gen, *OBJECT_OBJECTNESS)))
            vectors.append(noisy)
            origins.append(ProposalOrigin(kind="object", object_index=obj_pos))
    for _ in range(config.distractors_per_image):
        box = _random_box(gen)
        boxes.append(box.as_tuple())
        objectness.append(float(rng.uniform(gen, *DISTRACTOR_OBJECTNESS)))
        vectors.append(unit(rng.gaussian(gen, (config.dim,))))
        origins.append(ProposalOrigin(kind="distractor", object_index=None))

    embeddings = (
        np.stack(vectors) if vectors else np.zeros((0, config.dim), dtype=np.float64)
    )
    return _ImagePayload(
        index=index,
        token=token,
        caption=tuple(object_ids + context_ids),
        boxes=tuple(boxes),
        objectness=tuple(objectness),
        embeddings=embeddings,
        origins=tuple(origins),
        objects=tuple(objects),
        object_embeddings=np.stack(object_vectors),
    )


def biased_scores(
    object_embeddings: np.ndarray,
    concepts: np.ndarray,
    base_count: int,
    scale: float = SCORE_SCALE,
    inflation: float = SCORE_INFLATION,
) -> np.ndarray:
    """Scaled cosine scores with every base column inflated by a constant."""
    cos = np.clip(object_embeddings @ concepts.T, -1.0, 1.0)
    offsets = np.where(np.arange(concepts.shape[0]) < base_count, inflation, 0.0)
    return scale * cos + offsets[None, :]


def generate_world(
    config: WorldConfig,
    out_dir: str | Path,
    workers: int = 1,
    score_scale: float = SCORE_SCALE,
    score_inflation: float = SCORE_INFLATION,
) -> GroundTruth:
    """Write a full dataset plus truth and biased raw scores; returns the truth.

    Output is a pure function of the config: per-image substreams make
    the bytes identical for any worker count.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    concepts = concept_embeddings(config)
    tasks = [(config, concepts, index) for index in range(config.images)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            payloads = list(pool.map(_build_image, tasks, chunksize=8))
    else:
        payloads = [_build_image(task) for task in tasks]

    concept_rows = [
        {
            "concept_id": cid,
            "text": f"concept_{cid:03d}",
            "embedding_row": cid,
            "origin": "base" if cid < config.base_concepts else "caption",
        }
        for cid in range(config.concept_count)
    ]
    image_rows = []
    proposal_rows = []
    truth_images = []
    proposal_vectors: list[np.ndarray] = []
    object_vectors: list[np.ndarray] = []
    object_labels: list[int] = []
    for payload in payloads:
        image_id = image_name(payload.index)
        image_rows.append(
            {
                "image_id": image_id,
                "token_rows": [payload.index],
                "caption_concepts": list(payload.caption),
            }
        )
        for pos in range(len(payload.boxes)):
            proposal_rows.append(
                {
                    "image_id": image_id,
                    "box": list(payload.boxes[pos]),
                    "objectness": payload.objectness[pos],
                    "embedding_row": len(proposal_vectors) + pos,
                }
            )
        proposal_vectors.extend(payload.embeddings)
        truth_images.append(
            ImageTruth(image_id=image_id, objects=payload.objects, origins=payload.origins)
        )
        object_vectors.extend(payload.object_embeddings)
        object_labels.extend(obj.concept_id for obj in payload.objects)

    tokens = np.stack([payload.token for payload in payloads])
    proposals = (
        np.stack(proposal_vectors)
        if proposal_vectors
        else np.zeros((0, config.dim), dtype=np.float64)
    )
    write_tensor(Tensor(concepts.astype(np.float32)), out_dir / "concepts.mdet")
    write_tensor(Tensor(tokens.astype(np.float32)), out_dir / "images.mdet")
    write_tensor(Tensor(proposals.astype(np.float32)), out_dir / "proposals.mdet")
    write_jsonl(concept_rows, out_dir / "concepts.jsonl")
    write_jsonl(image_rows, out_dir / "images.jsonl")
    write_jsonl(proposal_rows, out_dir / "proposals.jsonl")
    write_manifest(
        {
            "concept_tensor": "concepts.mdet",
            "image_tensor": "images.mdet",
            "proposal_tensor": "proposals.mdet",
            "concepts": "concepts.jsonl",
            "images": "images.jsonl",
            "proposals": "proposals.jsonl",
        },
        out_dir / MANIFEST_NAME,
    )
    truth = GroundTruth(images=tuple(truth_images))
    write_truth(truth, out_dir / TRUTH_NAME)

    scores = biased_scores(
        np.stack(object_vectors),
        concepts,
        config.base_concepts,
        scale=score_scale,
        inflation=score_inflation,
    )
    write_tensor(Tensor(scores.astype(np.float32)), out_dir / SCORES_NAME)
    assert len(object_labels) == scores.shape[0]
    return truth


def write_truth(truth: GroundTruth, path: str | Path) -> None:
    rows = []
    for image in truth.images:
        rows.append(
            {
                "image_id": image.image_id,
                "objects": [
                    {"concept_id": obj.concept_id, "box": list(obj.box.as_tuple())}
                    for obj in image.objects
                ],
                "origins": [
                    {"kind": origin.kind, "object_index": origin.object_index}
                    for origin in image.origins
                ],
            }
        )
    write_jsonl(rows, path)


def load_truth(path: str | Path) -> GroundTruth:
    images = []
    for row in read_jsonl(path):
        objects = tuple(
            TrueObject(concept_id=int(obj["concept_id"]), box=BBox(*map(float, obj["box"])))
            for obj in row["objects"]
        )
        origins = tuple(
            ProposalOrigin(
                kind=str(origin["kind"]),
                object_index=None
                if origin["object_index"] is None
                else int(origin["object_index"]),
            )
            for origin in row["origins"]
        )
        images.append(
            ImageTruth(image_id=str(row["image_id"]), objects=objects, origins=origins)
        )
    return GroundTruth(images=tuple(images))


def score_labels(truth: GroundTruth) -> np.ndarray:
    """True concept per raw-score row: images in file order, objects in order."""
    labels = [obj.concept_id for image in truth.images for obj in image.objects]
    return np.asarray(labels, dtype=np.int64)


@dataclass(frozen=True)
class ConceptTally:
    concept_id: int
    mined: int
    correct: int
    true_objects: int
    covered: int


@dataclass(frozen=True)
class MiningReport:
    precision: float
    recall: float
    mined_pairs: int
    correct_pairs: int
    true_objects: int
    covered_objects: int
    empty: bool
    per_concept: tuple[ConceptTally, ...]


def evaluate_mining(
    pairs: Iterable[tuple[str, int, BBox]],
    truth: GroundTruth,
    iou_threshold: float = 0.5,
) -> MiningReport:
    """Pair-level precision and object-level recall against the truth.

    A pair is correct when some same-concept true object in its image
    overlaps the mined box with IoU >= threshold; every such object
    counts as covered.
    """
    by_image = truth.by_id()
    mined_by_concept: dict[int, int] = {}
    correct_by_concept: dict[int, int] = {}
    covered: set[tuple[str, int]] = set()
    mined_total = 0
    correct_total = 0
    for image_id, concept_id, box in pairs:
        if image_id not in by_image:
            raise DataError(f"mined pair references unknown image_id {image_id!r}")
        mined_total += 1
        mined_by_concept[concept_id] = mined_by_concept.get(concept_id, 0) + 1
        hit = False
        for obj_pos, obj in enumerate(by_image[image_id].objects):
            if obj.concept_id != concept_id:
                continue
            if iou(box, obj.box) >= iou_threshold:
                hit = True
                covered.add((image_id, obj_pos))
        if hit:
            correct_total += 1
            correct_by_concept[concept_id] = correct_by_concept.get(concept_id, 0) + 1

    true_by_concept: dict[int, int] = {}
    covered_by_concept: dict[int, int] = {}
    total_objects = 0
    for image in truth.images:
        for obj_pos, obj in enumerate(image.objects):
            total_objects += 1
            true_by_concept[obj.concept_id] = true_by_concept.get(obj.concept_id, 0) + 1
            if (image.image_id, obj_pos) in covered:
                covered_by_concept[obj.concept_id] = (
                    covered_by_concept.get(obj.concept_id, 0) + 1
                )

    concept_ids = sorted(set(mined_by_concept) | set(true_by_concept))
    tallies = tuple(
        ConceptTally(
            concept_id=cid,
            mined=mined_by_concept.get(cid, 0),
            correct=correct_by_concept.get(cid, 0),
            true_objects=true_by_concept.get(cid, 0),
            covered=covered_by_concept.get(cid, 0),
        )
        for cid in concept_ids
    )
    empty = mined_total == 0
    precision = 0.0 if empty else correct_total / mined_total
    recall = 0.0 if total_objects == 0 else len(covered) / total_objects
    return MiningReport(
        precision=precision,
        recall=recall,
        mined_pairs=mined_total,
        correct_pairs=correct_total,
        true_objects=total_objects,
        covered_objects=len(covered),
        empty=empty,
        per_concept=tallies,
    )


HISTOGRAM_BINS = 20


@dataclass(frozen=True)
class GroupStats:
    count: int
    top1_accuracy: float
    mean_confidence: float


@dataclass(frozen=True)
class VariantStats:
    variant: str
    base: GroupStats
    novel: GroupStats

    @property
    def confidence_gap(self) -> float:
        return self.base.mean_confidence - self.novel.mean_confidence


@dataclass(frozen=True)
class BiasReport:
    variants: tuple[VariantStats, ...]  # (raw, adjusted)
    histograms: Mapping[tuple[str, str], tuple[np.ndarray, np.ndarray]]

    def stats(self, variant: str) -> VariantStats:
        for entry in self.variants:
            if entry.variant == variant:
                return entry
        raise KeyError(variant)


def _group_stats(scores: np.ndarray, labels: np.ndarray, member: np.ndarray) -> GroupStats:
    rows = np.flatnonzero(member)
    top1 = scores[rows].argmax(axis=1)
    confidence = scores[rows].max(axis=1)
    accuracy = float(np.mean(top1 == labels[rows]))
    return GroupStats(
        count=int(rows.size),
        top1_accuracy=accuracy,
        mean_confidence=float(np.mean(confidence)),
    )


def evaluate_bias(
    raw: np.ndarray,
    adjusted: np.ndarray,
    labels: np.ndarray,
    base_ids: frozenset[int] | set[int],
    novel_ids: frozenset[int] | set[int],
) -> BiasReport:
    """Per-group accuracy/confidence for raw and adjusted score matrices."""
    raw = np.asarray(raw, dtype=np.float64)
    adjusted = np.asarray(adjusted, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if raw.shape != adjusted.shape or raw.ndim != 2:
        raise DataError("raw and adjusted score matrices must share a 2-D shape")
    if labels.shape[0] != raw.shape[0]:
        raise DataError("one label per score row required")
    if not novel_ids:
        raise DataError("split covers no novel concept")
    base_member = np.isin(labels, sorted(base_ids))
    novel_member = np.isin(labels, sorted(novel_ids))
    if not novel_member.any():
        raise DataError("split covers no novel concept with scored rows")
    if not base_member.any():
        raise DataError("split covers no base concept with scored rows")

    confidences = []
    for scores in (raw, adjusted):
        confidences.append(scores.max(axis=1))
    low = float(min(c.min() for c in confidences))
    high = float(max(c.max() for c in confidences))
    if high <= low:
        high = low + 1.0

    variants = []
    histograms: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}
    for variant, scores, confidence in (
        ("raw", raw, confidences[0]),
        ("adjusted", adjusted, confidences[1]),
    ):
        variants.append(
            VariantStats(
                variant=variant,
                base=_group_stats(scores, labels, base_member),
                novel=_group_stats(scores, labels, novel_member),
            )
        )
        for group, member in (("base", base_member), ("novel", novel_member)):
            counts, edges = np.histogram(
                confidence[member], bins=HISTOGRAM_BINS, range=(low, high)
            )
            histograms[(variant, group)] = (edges, counts)
    return BiasReport(variants=tuple(variants), histograms=histograms)


def _fmt(value: float) -> str:
    return repr(float(value))


def mining_report_csv(report: MiningReport, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / "mining_report.csv"
    lines = [
        "precision,recall,mined_pairs,correct_pairs,true_objects,covered_objects,empty",
        ",".join(
            [
                _fmt(report.precision),
                _fmt(report.recall),
                str(report.mined_pairs),
                str(report.correct_pairs),
                str(report.true_objects),
                str(report.covered_objects),
                str(int(report.empty)),
            ]
        ),
    ]
    summary.write_text("\n".join(lines) + "\n")
    counts = out_dir / "concept_counts.csv"
    lines = ["concept_id,mined,correct,true_objects,covered"]
    for tally in report.per_concept:
        lines.append(
            f"{tally.concept_id},{tally.mined},{tally.correct},"
            f"{tally.true_objects},{tally.covered}"
        )
    counts.write_text("\n".join(lines) + "\n")
    return [summary, counts]


def bias_report_csv(report: BiasReport, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / "bias_report.csv"
    lines = [
        "variant,base_count,novel_count,base_top1_acc,novel_top1_acc,"
        "base_mean_conf,novel_mean_conf,confidence_gap"
    ]
    for stats in report.variants:
        lines.append(
            ",".join(
                [
                    stats.variant,
                    str(stats.base.count),
                    str(stats.novel.count),
                    _fmt(stats.base.top1_accuracy),
                    _fmt(stats.novel.top1_accuracy),
                    _fmt(stats.base.mean_confidence),
                    _fmt(stats.novel.mean_confidence),
                    _fmt(stats.confidence_gap),
                ]
            )
        )
    summary.write_text("\n".join(lines) + "\n")
    histogram = out_dir / "histogram.csv"
    lines = ["variant,group,bin_index,bin_left,bin_right,count"]
    for (variant, group), (edges, counts) in report.histograms.items():
        for index in range(len(counts)):
            lines.append(
                f"{variant},{group},{index},{_fmt(edges[index])},"
                f"{_fmt(edges[index + 1])},{int(counts[index])}"
            )
    histogram.write_text("\n".join(lines) + "\n")
    return [summary, histogram]


def gamma_sweep_csv(
    rows: Sequence[tuple[float, VariantStats]], out_dir: str | Path
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "gamma_sweep.csv"
    lines = [
        "gamma,base_top1_acc,novel_top1_acc,base_mean_conf,novel_mean_conf,confidence_gap"
    ]
    for gamma, stats in rows:
        lines.append(
            ",".join(
                [
                    _fmt(gamma),
                    _fmt(stats.base.top1_accuracy),
                    _fmt(stats.novel.top1_accuracy),
                    _fmt(stats.base.mean_confidence),
                    _fmt(stats.novel.mean_confidence),
                    _fmt(stats.confidence_gap),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path
