"""Class-wise score calibration from per-concept embedding populations.

Each concept's mined embeddings are clustered by density peaks on
cosine distance (d = 1 - cos after unit normalization):

* Neighborhood radius d_c is the pairwise-distance quantile that gives
  an average of max(1, neighbor_fraction * N) neighbors per point: with
  M = N(N-1)/2 sorted pair distances, d_c is the t-th smallest where
  t = clamp(round(avg_neighbors * N / 2), 1, M). Python's round (half
  to even) is part of the contract. M = 0 leaves d_c = 0.
* Density rho_i = sum_{j != i} exp(-(d_ij / d_c)^2). When d_c = 0 the
  kernel degenerates to its limit: coincident points count 1, all
  others 0.
* Separation delta_i is the distance to the nearest point earlier in
  density order (rho descending, index ascending breaks exact ties);
  the densest point takes its largest distance to anyone.
* Centers are points with rho * delta above mean + center_sigma * std
  (population std); if none qualify, the single largest product wins
  (lowest index on ties). Cluster ids follow density order.
* Non-centers join the cluster of their nearest earlier-in-order
  neighbor. A densest point that somehow is not a center joins its
  nearest center.
* With several clusters, a cluster's border density is the highest rho
  among its points lying within d_c of another cluster; members below
  that density form the halo and do not count as retained.

The per-concept bias is retained_count / sqrt(cluster_count), i.e. the
cluster-averaged density rescaled by sqrt of the cluster count, and the
adjustment subtracts gamma * bias from raw scores column-wise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tensorio import DataError


@dataclass(frozen=True)
class ClusterParams:
    neighbor_fraction: float = 0.02
    center_sigma: float = 3.0

    def __post_init__(self) -> None:
        if not 0.0 < self.neighbor_fraction < 1.0:
            raise ValueError(
                f"neighbor_fraction {self.neighbor_fraction} outside (0, 1)"
            )
        if self.center_sigma < 0.0:
            raise ValueError(f"center_sigma must be non-negative, got {self.center_sigma}")


@dataclass(frozen=True)
class ClusterResult:
    concept_id: int
    point_count: int
    cluster_count: int
    retained_count: int
    centers: tuple[int, ...]
    assignment: np.ndarray  # (N,) cluster id per point
    halo: np.ndarray  # (N,) bool
    rho: np.ndarray  # (N,) float64
    delta: np.ndarray  # (N,) float64
    cutoff: float  # the d_c actually used


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def _cosine_distances(points: np.ndarray) -> np.ndarray:
    x = _unit_rows(np.asarray(points, dtype=np.float64))
    cos = np.clip(x @ x.T, -1.0, 1.0)
    d = 1.0 - cos
    np.fill_diagonal(d, 0.0)
    # mirror the upper triangle so d[i, j] and d[j, i] agree bit for bit
    upper = np.triu(d, 1)
    return upper + upper.T


def _cutoff_distance(pair_distances: np.ndarray, n: int, neighbor_fraction: float) -> float:
    if pair_distances.size == 0:
        return 0.0
    avg_neighbors = max(1.0, neighbor_fraction * n)
    rank = int(round(avg_neighbors * n / 2.0))
    rank = min(max(rank, 1), pair_distances.size)
    return float(np.sort(pair_distances, kind="stable")[rank - 1])


def density_peak_cluster(
    points: np.ndarray, params: ClusterParams | None = None, concept_id: int = -1
) -> ClusterResult:
    """Cluster one concept's embeddings; N >= 1 always yields K >= 1."""
    if params is None:
        params = ClusterParams()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty rank-2 array")
    n = points.shape[0]
    d = _cosine_distances(points)
    pair_distances = d[np.triu_indices(n, 1)]
    cutoff = _cutoff_distance(pair_distances, n, params.neighbor_fraction)

    if cutoff > 0.0:
        kernel = np.exp(-np.square(d / cutoff))
    else:
        kernel = (d == 0.0).astype(np.float64)
    np.fill_diagonal(kernel, 0.0)
    rho = kernel.sum(axis=1)

    order = np.argsort(-rho, kind="stable")
    delta = np.zeros(n, dtype=np.float64)
    neighbor = np.arange(n)
    root = int(order[0])
    delta[root] = float(d[root].max()) if n > 1 else 0.0
    for pos in range(1, n):
        i = int(order[pos])
        earlier = order[:pos]
        dists = d[i, earlier]
        best = int(np.argmin(dists))
        delta[i] = float(dists[best])
        neighbor[i] = int(earlier[best])

    product = rho * delta
    threshold = float(product.mean() + params.center_sigma * product.std())
    centers = [int(i) for i in order if product[i] > threshold]
    if not centers:
        centers = [int(np.argmax(product))]

    assignment = np.full(n, -1, dtype=np.int64)
    cluster_of = {center: idx for idx, center in enumerate(centers)}
    for pos in range(n):
        i = int(order[pos])
        if i in cluster_of:
            assignment[i] = cluster_of[i]
        elif pos == 0:
            # densest point missed the center cut: adopt its nearest center
            dists = d[i, centers]
            assignment[i] = int(np.argmin(dists))
        else:
            assignment[i] = assignment[neighbor[i]]

    halo = np.zeros(n, dtype=bool)
    k = len(centers)
    if k > 1:
        different = assignment[:, None] != assignment[None, :]
        near = d <= cutoff
        np.fill_diagonal(near, False)
        border = (different & near).any(axis=1)
        for cluster in range(k):
            members = assignment == cluster
            boundary = members & border
            if not boundary.any():
                continue
            border_rho = rho[boundary].max()
            halo |= members & (rho < border_rho)

    retained = int(n - int(halo.sum()))
    return ClusterResult(
        concept_id=concept_id,
        point_count=n,
        cluster_count=k,
        retained_count=retained,
        centers=tuple(centers),
        assignment=assignment,
        halo=halo,
        rho=rho,
        delta=delta,
        cutoff=cutoff,
    )


@dataclass(frozen=True)
class BiasEntry:
    concept_id: int
    beta: float
    cluster_count: int
    retained_count: int


@dataclass(frozen=True)
class BiasVector:
    gamma: float
    entries: tuple[BiasEntry, ...]  # ascending concept_id

    def beta(self, concept_id: int) -> float:
        for entry in self.entries:
            if entry.concept_id == concept_id:
                return entry.beta
        return 0.0

    def beta_for(self, concept_ids: Sequence[int]) -> np.ndarray:
        table = {entry.concept_id: entry.beta for entry in self.entries}
        return np.array([table.get(cid, 0.0) for cid in concept_ids], dtype=np.float64)


def compute_bias(results: Mapping[int, ClusterResult], gamma: float = 0.4) -> BiasVector:
    """Bias per concept: retained / sqrt(clusters); absent concepts read 0."""
    entries = []
    for concept_id in sorted(results):
        result = results[concept_id]
        density = result.retained_count / result.cluster_count
        beta = float(np.sqrt(result.cluster_count) * density)
        entries.append(
            BiasEntry(
                concept_id=concept_id,
                beta=beta,
                cluster_count=result.cluster_count,
                retained_count=result.retained_count,
            )
        )
    return BiasVector(gamma=gamma, entries=tuple(entries))


def adjust_scores(
    raw: np.ndarray, bias: BiasVector, gamma_override: float | None = None
) -> np.ndarray:
    """Subtract gamma * beta per concept column.

    Accepts a (Q,) vector or a (P, Q) matrix whose column j belongs to
    concept_id j. gamma = 0 returns the input values untouched.
    """
    gamma = bias.gamma if gamma_override is None else gamma_override
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim not in (1, 2):
        raise ValueError("raw scores must be a vector or a matrix")
    concept_ids = range(raw.shape[-1])
    offsets = gamma * bias.beta_for(list(concept_ids))
    return raw - offsets


def save_bias(bias: BiasVector, path: str | Path) -> None:
    payload = {
        "gamma": bias.gamma,
        "beta": [
            {
                "concept_id": entry.concept_id,
                "beta": entry.beta,
                "k": entry.cluster_count,
                "n_tilde": entry.retained_count,
            }
            for entry in sorted(bias.entries, key=lambda e: e.concept_id)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_bias(path: str | Path) -> BiasVector:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or "gamma" not in payload or "beta" not in payload:
        raise DataError(f"{path}: expected an object with 'gamma' and 'beta'")
    entries = []
    seen = set()
    for row in payload["beta"]:
        concept_id = int(row["concept_id"])
        if concept_id in seen:
            raise DataError(f"{path}: duplicate concept_id {concept_id}")
        seen.add(concept_id)
        entries.append(
            BiasEntry(
                concept_id=concept_id,
                beta=float(row["beta"]),
                cluster_count=int(row["k"]),
                retained_count=int(row["n_tilde"]),
            )
        )
    entries.sort(key=lambda e: e.concept_id)
    return BiasVector(gamma=float(payload["gamma"]), entries=tuple(entries))
