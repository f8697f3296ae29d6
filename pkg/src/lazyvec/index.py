"""Exact flat index and the two-level inverted-file (IVF) structure.

The flat index is the ground-truth oracle for every recall measurement. The
IVF index keeps cluster centroids in memory (level 1); level 2 holds only
member chunk ids and a profiled generation latency per cluster, because the
member embeddings themselves are pruned at build time and re-materialized on
demand by the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import DTYPE, CostModel, DataChunk, SearchHit, sq_distances, top_k_hits
from .embedder import Embedder, estimate_gen_latency

KMEANS_ITERS_DEFAULT = 20


class ClusterVectors:
    """Materialized member embeddings of one cluster: ids plus row matrix."""

    __slots__ = ("ids", "vectors")

    def __init__(self, ids: np.ndarray, vectors: np.ndarray) -> None:
        self.ids = np.asarray(ids, dtype=np.int64)
        self.vectors = np.asarray(vectors, dtype=DTYPE)
        if self.vectors.ndim != 2 or self.ids.shape[0] != self.vectors.shape[0]:
            raise ValueError("ids and vectors must have matching leading length")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, np.ndarray]], dimension: int) -> "ClusterVectors":
        if not pairs:
            return cls(np.empty(0, dtype=np.int64), np.empty((0, dimension), dtype=DTYPE))
        ids = np.array([p[0] for p in pairs], dtype=np.int64)
        vectors = np.stack([np.asarray(p[1], dtype=DTYPE) for p in pairs])
        return cls(ids, vectors)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        for i in range(len(self)):
            yield int(self.ids[i]), self.vectors[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterVectors):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.vectors, other.vectors)


@dataclass
class FlatIndex:
    """Every embedding in one matrix; search compares the query to all rows."""

    ids: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def flat_build(chunks: Sequence[DataChunk], embedder: Embedder) -> FlatIndex:
    if not chunks:
        raise ValueError("cannot index empty corpus")
    ids = np.array([c.id for c in chunks], dtype=np.int64)
    vectors = np.stack([embedder.embed(c.text) for c in chunks])
    return FlatIndex(ids, vectors)


def flat_search(index: FlatIndex, query: np.ndarray, k: int) -> list[SearchHit]:
    """The k globally nearest entries, sorted by distance then chunk id.

    Asking for more results than the index holds returns the full sorted
    list. This is the exact baseline all approximate modes are scored against.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dists = sq_distances(index.vectors, query)
    return top_k_hits(index.ids, dists, k)


@dataclass(frozen=True)
class Centroid:
    cluster_id: int
    vector: np.ndarray


@dataclass
class Cluster:
    """Level-2 record: member chunk ids plus profiled generation latency."""

    cluster_id: int
    member_chunk_ids: list[int]
    gen_latency: float
    persisted: bool = False

    def __len__(self) -> int:
        return len(self.member_chunk_ids)


@dataclass
class KMeansResult:
    centroids: np.ndarray          # (k, D) float32
    assignments: np.ndarray        # (n,) int64, indices into centroids
    wcss_history: list[float]      # within-cluster sum of squares per iteration


def _centroid_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared distances, one centroid column at a time.

    The direct (x - c)^2 form avoids the cancellation of the expanded dot
    product, which keeps the per-iteration WCSS sequence monotone.
    """
    n = points.shape[0]
    k = centroids.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        d = points - centroids[j]
        out[:, j] = (d * d).sum(axis=1)
    return out


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[int(rng.integers(n))]
    d = points - centroids[0]
    closest = (d * d).sum(axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = points[idx]
        d = points - centroids[j]
        closest = np.minimum(closest, (d * d).sum(axis=1))
    return centroids


def kmeans(
    embeddings: np.ndarray,
    k: int,
    iters: int = KMEANS_ITERS_DEFAULT,
    seed: int = 0,
) -> KMeansResult:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Runs in float64 and is bitwise deterministic for a fixed seed. Empty
    clusters are repaired by re-seeding the empty centroid at the point
    currently farthest from its assigned centroid. Iteration stops early once
    assignments are stable; on termination every point is assigned to its
    nearest centroid.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k ({k}) exceeds number of points ({n})")
    if iters < 1:
        raise ValueError("iters must be >= 1")

    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plus_plus_init(points, k, rng)
    assignments: np.ndarray | None = None
    wcss_history: list[float] = []
    converged = False

    for _ in range(iters):
        dists = _centroid_dists(points, centroids)
        new_assign = dists.argmin(axis=1)
        wcss_history.append(float(dists[np.arange(n), new_assign].sum()))
        if assignments is not None and np.array_equal(new_assign, assignments):
            converged = True
            break
        assignments = new_assign

        assigned_d = dists[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=k)
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            if counts[j] > 0:
                new_centroids[j] = points[new_assign == j].mean(axis=0)
        repair_pool = assigned_d.copy()
        for j in range(k):
            if counts[j] == 0:
                p = int(repair_pool.argmax())
                new_centroids[j] = points[p]
                repair_pool[p] = -np.inf
        centroids = new_centroids

    if not converged:
        # The loop ended on a mean update; one more assignment pass restores
        # the nearest-centroid postcondition.
        dists = _centroid_dists(points, centroids)
        assignments = dists.argmin(axis=1)
        wcss_history.append(float(dists[np.arange(n), assignments].sum()))

    assert assignments is not None
    return KMeansResult(centroids.astype(DTYPE), assignments.astype(np.int64), wcss_history)


@dataclass
class IvfIndex:
    """Two-level index: centroids in memory, member ids + cost per cluster."""

    dimension: int
    kmeans_iters: int
    seed: int
    clusters: dict[int, Cluster] = field(default_factory=dict)
    centroid_vectors: dict[int, np.ndarray] = field(default_factory=dict)
    _level1_ids: np.ndarray | None = field(default=None, repr=False)
    _level1_matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    def centroids(self) -> list[Centroid]:
        return [Centroid(cid, self.centroid_vectors[cid]) for cid in sorted(self.clusters)]

    def level1_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Centroid ids + matrix in ascending id order, cached until mutation."""
        if self._level1_ids is None or self._level1_matrix is None:
            ids = sorted(self.clusters)
            self._level1_ids = np.array(ids, dtype=np.int64)
            if ids:
                self._level1_matrix = np.stack([self.centroid_vectors[c] for c in ids])
            else:
                self._level1_matrix = np.empty((0, self.dimension), dtype=DTYPE)
        return self._level1_ids, self._level1_matrix

    def set_cluster(self, cluster: Cluster, centroid: np.ndarray) -> None:
        self.clusters[cluster.cluster_id] = cluster
        self.centroid_vectors[cluster.cluster_id] = np.asarray(centroid, dtype=DTYPE)
        self._level1_ids = None
        self._level1_matrix = None

    def drop_cluster(self, cluster_id: int) -> None:
        del self.clusters[cluster_id]
        del self.centroid_vectors[cluster_id]
        self._level1_ids = None
        self._level1_matrix = None

    def all_member_ids(self) -> list[int]:
        out: list[int] = []
        for cid in sorted(self.clusters):
            out.extend(self.clusters[cid].member_chunk_ids)
        return out


def default_n_clusters(n_chunks: int) -> int:
    return max(1, math.ceil(math.sqrt(n_chunks)))


def ivf_build(
    chunks: Sequence[DataChunk],
    embedder: Embedder,
    cost_model: CostModel,
    n_clusters: int | None = None,
    iters: int = KMEANS_ITERS_DEFAULT,
    seed: int = 0,
) -> IvfIndex:
    """Cluster the corpus and keep only centroids, member ids and costs.

    Member embeddings are computed for clustering and then discarded; the
    caller decides (via the storage module) which clusters are expensive
    enough to persist. Clusters left empty by k-means are dropped, so the
    resulting cluster count can be lower than requested.
    """
    if not chunks:
        raise ValueError("cannot index empty corpus")
    k = n_clusters if n_clusters is not None else default_n_clusters(len(chunks))
    vectors = np.stack([embedder.embed(c.text) for c in chunks])
    result = kmeans(vectors, k, iters=iters, seed=seed)

    index = IvfIndex(dimension=embedder.dimension, kmeans_iters=iters, seed=seed)
    by_id = {c.id: c for c in chunks}
    for j in range(result.centroids.shape[0]):
        member_ids = [chunks[i].id for i in np.flatnonzero(result.assignments == j)]
        if not member_ids:
            continue
        est = estimate_gen_latency([by_id[m] for m in member_ids], cost_model, cluster_id=j)
        index.set_cluster(
            Cluster(cluster_id=j, member_chunk_ids=member_ids, gen_latency=est.gen_latency),
            result.centroids[j],
        )
    return index


def search_centroids(index: IvfIndex, query: np.ndarray, nprobe: int) -> list[int]:
    """Ids of the nprobe nearest centroids, ordered by distance then id."""
    if nprobe < 1 or nprobe > index.num_clusters:
        raise ValueError(f"nprobe must be in [1, {index.num_clusters}], got {nprobe}")
    ids, matrix = index.level1_arrays()
    dists = sq_distances(matrix, query)
    order = np.lexsort((ids, dists))
    return [int(ids[i]) for i in order[:nprobe]]


def search_cluster_arrays(
    ids: np.ndarray, vectors: np.ndarray, query: np.ndarray, k: int
) -> list[SearchHit]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if ids.shape[0] == 0:
        return []
    dists = sq_distances(vectors, query)
    return top_k_hits(ids, dists, k)


def search_cluster(
    member_embeddings: Sequence[tuple[int, np.ndarray]] | ClusterVectors,
    query: np.ndarray,
    k: int,
) -> list[SearchHit]:
    """k nearest hits within one materialized cluster; empty input is empty."""
    if isinstance(member_embeddings, ClusterVectors):
        cv = member_embeddings
    else:
        dim = int(np.asarray(query).shape[0])
        cv = ClusterVectors.from_pairs(list(member_embeddings), dim)
    return search_cluster_arrays(cv.ids, cv.vectors, query, k)


def merge_hits(per_cluster_results: Sequence[Sequence[SearchHit]], k: int) -> list[SearchHit]:
    """Global top-k across per-cluster hit lists.

    Deduplicates by chunk id keeping the minimum distance; ordering is by
    distance with ties broken by ascending chunk id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    combined = sorted(
        (hit for hits in per_cluster_results for hit in hits),
        key=lambda h: (h.distance, h.chunk_id),
    )
    out: list[SearchHit] = []
    seen: set[int] = set()
    for hit in combined:
        if hit.chunk_id in seen:
            continue
        seen.add(hit.chunk_id)
        out.append(hit)
        if len(out) == k:
            break
    return out
