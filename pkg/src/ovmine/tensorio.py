"""Binary tensor container plus the JSONL/manifest dataset model.

Tensor file layout, all little-endian:

    magic    4 bytes ASCII ``MDET``
    version  u32, currently 1
    dtype    u8, 1 = IEEE-754 float32
    rank     u8
    shape    rank x u64
    payload  row-major float32 values

A rank-1 tensor holding one value is therefore 22 bytes. Readers and
writers reject non-finite elements; every embedding consumed by the
pipelines comes out of a validated tensor row.

Metadata lives in JSONL sidecars (one JSON object per line):

    proposals: image_id, box [x1, y1, x2, y2], objectness, embedding_row
    concepts:  concept_id, text, embedding_row, origin ("base" | "caption")
    images:    image_id, token_rows (first row is the global embedding),
               caption_concepts

A flat ``key = value`` manifest with ``#`` comments ties the files of
one dataset together; paths are resolved relative to the manifest.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox

MAGIC = b"MDET"
VERSION = 1
DTYPE_FLOAT32 = 1

_HEADER = struct.Struct("<4sIBB")

DATASET_MANIFEST_KEYS = frozenset(
    {"concept_tensor", "image_tensor", "proposal_tensor", "concepts", "images", "proposals"}
)
WEIGHT_MANIFEST_KEYS = frozenset(
    {"w_q", "w_k", "w_v", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"}
)


class DataError(ValueError):
    """Malformed or inconsistent on-disk data."""


@dataclass(frozen=True)
class Tensor:
    """Row-major float32 tensor with an explicit shape."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise DataError("non-finite element in tensor")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def rank(self) -> int:
        return self.values.ndim


def write_tensor(tensor: Tensor, sink: str | Path | BinaryIO) -> int:
    """Serialize ``tensor``; returns the number of bytes written."""
    arr = tensor.values
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, arr.ndim)
    shape = np.asarray(arr.shape, dtype="<u8").tobytes()
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    blob = header + shape + payload
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(blob)
    else:
        sink.write(blob)
    return len(blob)


def read_tensor(source: str | Path | BinaryIO) -> Tensor:
    if isinstance(source, (str, Path)):
        blob = Path(source).read_bytes()
    else:
        blob = source.read()
    if len(blob) < _HEADER.size:
        raise DataError("truncated header")
    magic, version, dtype, rank = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise DataError(f"unknown dtype tag {dtype}")
    offset = _HEADER.size
    if len(blob) < offset + 8 * rank:
        raise DataError("truncated shape")
    shape = np.frombuffer(blob, dtype="<u8", count=rank, offset=offset)
    offset += 8 * rank
    count = int(np.prod(shape, dtype=np.uint64)) if rank else 1
    if len(blob) - offset != 4 * count:
        raise DataError(
            f"shape/data length mismatch: shape {tuple(int(s) for s in shape)} "
            f"wants {4 * count} payload bytes, found {len(blob) - offset}"
        )
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    values = values.reshape(tuple(int(s) for s in shape))
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite element in tensor")
    return Tensor(values.copy())


def parse_manifest(path: str | Path, known_keys: frozenset[str] | None = None) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise DataError(f"{path}:{lineno}: empty key or value")
        if key in entries:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        if known_keys is not None and key not in known_keys:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        entries[key] = value
    return entries


def write_manifest(entries: Mapping[str, str], path: str | Path) -> None:
    lines = [f"{key} = {entries[key]}" for key in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_jsonl(rows: Iterable[Mapping], path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return rows


@dataclass(frozen=True)
class ProposalRecord:
    image_id: str
    box: BBox
    objectness: float
    embedding_row: int
    embedding: np.ndarray  # resolved float32 tensor row


@dataclass(frozen=True)
class ConceptRecord:
    concept_id: int
    text: str
    embedding_row: int
    origin: str


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    image_tokens: np.ndarray  # (k, dim), k >= 1, row 0 is the global embedding
    proposals: tuple[ProposalRecord, ...]
    caption_concepts: tuple[int, ...]

    def proposal_embeddings(self) -> np.ndarray:
        if not self.proposals:
            return np.zeros((0, self.image_tokens.shape[1]), dtype=np.float32)
        return np.stack([p.embedding for p in self.proposals])

    def objectness(self) -> np.ndarray:
        return np.array([p.objectness for p in self.proposals], dtype=np.float64)


class Vocabulary:
    """Concept records plus their embedding matrix."""

    def __init__(self, concepts: Sequence[ConceptRecord], tensor: Tensor):
        if tensor.rank != 2:
            raise DataError(f"concept tensor must be rank 2, got {tensor.rank}")
        self.concepts: tuple[ConceptRecord, ...] = tuple(
            sorted(concepts, key=lambda c: c.concept_id)
        )
        self.tensor = tensor
        self._row: dict[int, int] = {}
        for concept in self.concepts:
            if concept.concept_id in self._row:
                raise DataError(f"duplicate concept_id {concept.concept_id}")
            if not 0 <= concept.embedding_row < tensor.shape[0]:
                raise DataError(
                    f"dangling embedding_row {concept.embedding_row} for concept {concept.concept_id}"
                )
            if concept.origin not in ("base", "caption"):
                raise DataError(f"bad origin {concept.origin!r} for concept {concept.concept_id}")
            self._row[concept.concept_id] = concept.embedding_row

    @property
    def dim(self) -> int:
        return self.tensor.shape[1]

    def __contains__(self, concept_id: int) -> bool:
        return concept_id in self._row

    def embedding(self, concept_id: int) -> np.ndarray:
        try:
            return self.tensor.values[self._row[concept_id]]
        except KeyError:
            raise DataError(f"unknown concept_id {concept_id}") from None

    def ids(self) -> tuple[int, ...]:
        return tuple(c.concept_id for c in self.concepts)

    def base_ids(self) -> frozenset[int]:
        return frozenset(c.concept_id for c in self.concepts if c.origin == "base")

    def novel_ids(self) -> frozenset[int]:
        return frozenset(c.concept_id for c in self.concepts if c.origin == "caption")


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...]
    vocabulary: Vocabulary


def _require(row: Mapping, key: str, where: str):
    if key not in row:
        raise DataError(f"{where}: missing field {key!r}")
    return row[key]


def load_concepts(jsonl_path: str | Path, tensor: Tensor) -> Vocabulary:
    records = []
    for i, row in enumerate(read_jsonl(jsonl_path)):
        where = f"{jsonl_path}:{i + 1}"
        records.append(
            ConceptRecord(
                concept_id=int(_require(row, "concept_id", where)),
                text=str(_require(row, "text", where)),
                embedding_row=int(_require(row, "embedding_row", where)),
                origin=str(_require(row, "origin", where)),
            )
        )
    return Vocabulary(records, tensor)


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Assemble validated records in (image_id, line order) order."""
    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path, DATASET_MANIFEST_KEYS)
    missing = DATASET_MANIFEST_KEYS - entries.keys()
    if missing:
        raise DataError(f"{manifest_path}: missing manifest keys {sorted(missing)}")
    base = manifest_path.parent
    concept_tensor = read_tensor(base / entries["concept_tensor"])
    image_tensor = read_tensor(base / entries["image_tensor"])
    proposal_tensor = read_tensor(base / entries["proposal_tensor"])
    for name, tensor in (("image", image_tensor), ("proposal", proposal_tensor)):
        if tensor.rank != 2:
            raise DataError(f"{name} tensor must be rank 2, got rank {tensor.rank}")
        if tensor.shape[1] != concept_tensor.shape[1]:
            raise DataError(
                f"{name} tensor dim {tensor.shape[1]} != concept dim {concept_tensor.shape[1]}"
            )

    vocabulary = load_concepts(base / entries["concepts"], concept_tensor)

    proposals_by_image: dict[str, list[ProposalRecord]] = {}
    for i, row in enumerate(read_jsonl(base / entries["proposals"])):
        where = f"{entries['proposals']}:{i + 1}"
        image_id = str(_require(row, "image_id", where))
        box_values = _require(row, "box", where)
        if not isinstance(box_values, list) or len(box_values) != 4:
            raise DataError(f"{where}: box must hold four corner coordinates")
        try:
            box = BBox(*(float(v) for v in box_values))
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from exc
        objectness = float(_require(row, "objectness", where))
        if not 0.0 <= objectness <= 1.0:
            raise DataError(f"{where}: objectness {objectness} outside [0, 1]")
        embedding_row = int(_require(row, "embedding_row", where))
        if not 0 <= embedding_row < proposal_tensor.shape[0]:
            raise DataError(f"{where}: dangling embedding_row {embedding_row}")
        proposals_by_image.setdefault(image_id, []).append(
            ProposalRecord(
                image_id=image_id,
                box=box,
                objectness=objectness,
                embedding_row=embedding_row,
                embedding=proposal_tensor.values[embedding_row],
            )
        )

    images = []
    seen: set[str] = set()
    for i, row in enumerate(read_jsonl(base / entries["images"])):
        where = f"{entries['images']}:{i + 1}"
        image_id = str(_require(row, "image_id", where))
        if image_id in seen:
            raise DataError(f"{where}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        token_rows = _require(row, "token_rows", where)
        if not isinstance(token_rows, list) or not token_rows:
            raise DataError(f"{where}: token_rows must list at least one row")
        for r in token_rows:
            if not 0 <= int(r) < image_tensor.shape[0]:
                raise DataError(f"{where}: dangling embedding_row {r}")
        tokens = image_tensor.values[[int(r) for r in token_rows]]
        caption = []
        for cid in _require(row, "caption_concepts", where):
            cid = int(cid)
            if cid not in vocabulary:
                raise DataError(f"{where}: unknown concept_id {cid}")
            if cid not in caption:  # dedupe, first mention wins
                caption.append(cid)
        images.append(
            ImageRecord(
                image_id=image_id,
                image_tokens=tokens,
                proposals=tuple(proposals_by_image.pop(image_id, [])),
                caption_concepts=tuple(caption),
            )
        )
    if proposals_by_image:
        stray = sorted(proposals_by_image)[0]
        raise DataError(f"proposals reference unknown image_id {stray!r}")
    images.sort(key=lambda rec: rec.image_id)
    return Dataset(images=tuple(images), vocabulary=vocabulary)
