"""Retrieval pipeline orchestration and index mutation.

One Engine owns the index, the simulated clock, the embedding cache and the
store directory. Retrieval materializes the probed clusters through one of
five modes; the mode changes only the simulated cost accounting, never the
hit lists, because the deterministic embedder makes loaded, cached and
regenerated vectors bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cache import EmbeddingCache, MinLatencyThreshold, admits
from .config import EngineConfig
from .core import CostModel, DataChunk, SearchHit, SimClock
from .datafiles import read_chunks, write_chunks
from .embedder import (
    DeterministicEmbedder,
    embed_cluster,
    estimate_gen_latency,
    estimate_load_latency,
)
from .index import (
    Cluster,
    ClusterVectors,
    FlatIndex,
    IvfIndex,
    flat_build,
    flat_search,
    ivf_build,
    kmeans,
    merge_hits,
    search_centroids,
    search_cluster_arrays,
)
from .storage import (
    build_manifest,
    delete_cluster_file,
    index_from_manifest,
    load_persisted,
    profile_and_persist,
    read_manifest,
    regenerate_cluster_vectors,
    write_cluster_file,
    write_manifest,
)


class RetrievalMode(str, Enum):
    FLAT = "flat"              # exact search over every embedding
    IVF = "ivf"                # two-level search, embeddings resident in memory
    GEN = "gen"                # two-level search, every probe regenerates
    GEN_LOAD = "gen-load"      # persisted clusters load, the rest regenerate
    CACHED = "cached"          # gen-load plus the adaptive embedding cache


def parse_mode(value: str) -> RetrievalMode:
    try:
        return RetrievalMode(value)
    except ValueError:
        valid = ", ".join(m.value for m in RetrievalMode)
        raise ValueError(f"unknown mode {value!r}; valid modes: {valid}") from None


SOURCE_PERSISTED = "persisted-load"
SOURCE_CACHE_HIT = "cache-hit"
SOURCE_GENERATED = "generated"
SOURCE_MATERIALIZED = "materialized"


@dataclass(frozen=True)
class RetrievalConfig:
    nprobe: int = 1
    k: int = 10
    slo: float | None = None

    def __post_init__(self) -> None:
        if self.nprobe < 1:
            raise ValueError("nprobe must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ClusterAccess:
    cluster_id: int
    source: str
    cost: float
    n_embeddings: int


@dataclass(frozen=True)
class RetrievalTrace:
    """Cost breakdown of one retrieval; total is the sum of its phases."""

    mode: str
    query_embed_cost: float
    cluster_accesses: tuple[ClusterAccess, ...]
    search_cost: float
    total: float
    slo_met: bool
    was_miss: bool


class Engine:
    """Single-owner engine; retrieve and mutate calls must be serialized."""

    def __init__(
        self,
        config: EngineConfig,
        index: IvfIndex,
        chunks: Mapping[int, DataChunk],
        doc_ids: Mapping[int, str],
        store_dir: Path,
    ) -> None:
        self.config = config
        self.index = index
        self.chunks: dict[int, DataChunk] = dict(chunks)
        self.doc_ids: dict[int, str] = dict(doc_ids)
        self.store_dir = Path(store_dir)
        self.embedder = DeterministicEmbedder(config.embedder_spec())
        self.cost_model: CostModel = config.cost_model()
        self.clock = SimClock()
        self.cache = self._new_cache()
        self._chunk_cluster: dict[int, int] = {}
        for cid, cluster in index.clusters.items():
            for m in cluster.member_chunk_ids:
                self._chunk_cluster[m] = cid
        self._next_cluster_id = max(index.clusters, default=-1) + 1
        self._mutations = 0
        total_chars = sum(c.char_len for c in self.chunks.values())
        n = max(1, index.num_clusters)
        self._build_avg_mass = total_chars / n
        self._materialized: dict[int, ClusterVectors] = {}
        self._flat: FlatIndex | None = None

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(
        cls,
        chunks: Sequence[DataChunk],
        doc_ids: Mapping[int, str],
        store_dir: Path | str,
        config: EngineConfig | None = None,
    ) -> "Engine":
        """Index a corpus into store_dir: cluster, profile, persist, manifest.

        The manifest is written last so a partially populated directory is
        never mistaken for a built store. Deterministic for a fixed config.
        """
        config = config if config is not None else EngineConfig()
        if not chunks:
            raise ValueError("cannot index empty corpus")
        ids = [c.id for c in chunks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate chunk ids in corpus")
        store_dir = Path(store_dir)
        store_dir.mkdir(parents=True, exist_ok=True)

        embedder = DeterministicEmbedder(config.embedder_spec())
        cost_model = config.cost_model()
        index = ivf_build(
            chunks,
            embedder,
            cost_model,
            n_clusters=config.n_clusters,
            iters=config.kmeans_iters,
            seed=config.seed,
        )
        chunk_map = {c.id: c for c in chunks}
        profile_and_persist(index, chunk_map, embedder, cost_model, store_dir)
        write_chunks(store_dir, list(chunks), dict(doc_ids))
        write_manifest(store_dir, build_manifest(index, config.embedder_spec(), cost_model))
        return cls(config, index, chunk_map, doc_ids, store_dir)

    @classmethod
    def load(cls, store_dir: Path | str, config: EngineConfig | None = None) -> "Engine":
        """Rebuild an engine from a store directory written by build/save.

        The manifest carries the embedder spec and cost model, so only knobs
        outside the manifest (cache, thresholds, chunking) come from config.
        """
        store_dir = Path(store_dir)
        manifest = read_manifest(store_dir)
        base = config if config is not None else EngineConfig()
        cfg = base.with_overrides(
            dimension=manifest.dimension,
            embed_seed=manifest.embedder.seed,
            normalize=manifest.embedder.normalize,
            gen_rate=manifest.cost_model.gen_rate,
            load_rate=manifest.cost_model.load_rate,
            slo=manifest.cost_model.slo,
            kmeans_iters=manifest.kmeans_iters,
            seed=manifest.seed,
        )
        chunks, doc_ids = read_chunks(store_dir)
        index = index_from_manifest(manifest)
        return cls(cfg, index, {c.id: c for c in chunks}, doc_ids, store_dir)

    def save(self) -> None:
        """Rewrite the chunk table and manifest to reflect mutations."""
        ordered = [self.chunks[cid] for cid in sorted(self.chunks)]
        write_chunks(self.store_dir, ordered, self.doc_ids)
        write_manifest(
            self.store_dir, build_manifest(self.index, self.config.embedder_spec(), self.cost_model)
        )

    def _new_cache(self) -> EmbeddingCache:
        threshold = MinLatencyThreshold(
            alpha=self.config.alpha,
            step=self.config.step(),
            variant=self.config.threshold_variant,
        )
        return EmbeddingCache(
            capacity_bytes=self.config.capacity_bytes(),
            decay_factor=self.config.decay_factor,
            threshold=threshold,
        )

    def new_session(self) -> None:
        """Reset clock, cache and threshold; replay runs start from here."""
        self.clock = SimClock()
        self.cache = self._new_cache()

    # ------------------------------------------------------------------
    # retrieval

    def flat_index(self) -> FlatIndex:
        """Exact index over the current chunk set (the recall oracle)."""
        if self._flat is None:
            ordered = [self.chunks[cid] for cid in sorted(self.chunks)]
            self._flat = flat_build(ordered, self.embedder)
        return self._flat

    def materialized_cluster(self, cluster_id: int) -> ClusterVectors:
        vectors = self._materialized.get(cluster_id)
        if vectors is None:
            vectors = regenerate_cluster_vectors(
                self.index.clusters[cluster_id], self.chunks, self.embedder
            )
            self._materialized[cluster_id] = vectors
        return vectors

    def retrieve(
        self,
        query_text: str,
        config: RetrievalConfig,
        mode: RetrievalMode = RetrievalMode.CACHED,
    ) -> tuple[list[SearchHit], RetrievalTrace]:
        """Run one query and account its simulated cost.

        Embeds the query (charged at gen_rate), probes the nprobe nearest
        centroids, materializes each probed cluster according to the mode,
        searches within them and merges the top k. In cached mode the round
        also updates the admission threshold, with was_miss true when any
        probed non-persisted cluster had to be regenerated.
        """
        query = self.embedder.embed(query_text)
        query_cost = len(query_text) / self.cost_model.gen_rate
        self.clock.charge(query_cost)

        accesses: list[ClusterAccess] = []
        n_distances = 0
        if mode is RetrievalMode.FLAT:
            flat = self.flat_index()
            hits = flat_search(flat, query, config.k)
            n_distances += len(flat)
        else:
            if self.index.num_clusters == 0:
                hits = []
            else:
                nprobe = min(config.nprobe, self.index.num_clusters)
                probe_ids = search_centroids(self.index, query, nprobe)
                n_distances += self.index.num_clusters
                per_cluster: list[list[SearchHit]] = []
                for cid in probe_ids:
                    vectors, access = self._materialize_for_mode(cid, mode)
                    accesses.append(access)
                    per_cluster.append(
                        search_cluster_arrays(vectors.ids, vectors.vectors, query, config.k)
                    )
                    n_distances += len(vectors)
                hits = merge_hits(per_cluster, config.k)

        search_cost = n_distances * self.config.search_cost_per_distance
        if search_cost > 0:
            self.clock.charge(search_cost)

        total = query_cost
        for access in accesses:
            total += access.cost
        total += search_cost

        was_miss = any(a.source == SOURCE_GENERATED for a in accesses)
        if mode is RetrievalMode.CACHED:
            self.cache.update_threshold(was_miss, total)

        slo = config.slo if config.slo is not None else self.cost_model.slo
        trace = RetrievalTrace(
            mode=mode.value,
            query_embed_cost=query_cost,
            cluster_accesses=tuple(accesses),
            search_cost=search_cost,
            total=total,
            slo_met=total <= slo,
            was_miss=was_miss,
        )
        return hits, trace

    def _materialize_for_mode(
        self, cluster_id: int, mode: RetrievalMode
    ) -> tuple[ClusterVectors, ClusterAccess]:
        cluster = self.index.clusters[cluster_id]
        if mode is RetrievalMode.IVF:
            vectors = self.materialized_cluster(cluster_id)
            return vectors, ClusterAccess(cluster_id, SOURCE_MATERIALIZED, 0.0, len(vectors))

        if mode in (RetrievalMode.GEN_LOAD, RetrievalMode.CACHED) and cluster.persisted:
            vectors = load_persisted(self.store_dir, cluster_id, self.cost_model, self.clock)
            cost = estimate_load_latency(len(vectors), self.cost_model)
            return vectors, ClusterAccess(cluster_id, SOURCE_PERSISTED, cost, len(vectors))

        if mode is RetrievalMode.CACHED:
            entry = self.cache.lookup(cluster_id)
            if entry is not None:
                self.cache.decay_counters()
                return entry.vectors, ClusterAccess(
                    cluster_id, SOURCE_CACHE_HIT, 0.0, len(entry.vectors)
                )
            vectors, cost = self._generate(cluster)
            if cost > 0:
                if admits(self.cache.threshold, cost):
                    self.cache.insert(cluster_id, vectors, cost)
                else:
                    self.cache.reject_admission()
            self.cache.decay_counters()
            return vectors, ClusterAccess(cluster_id, SOURCE_GENERATED, cost, len(vectors))

        # GEN always regenerates; GEN_LOAD regenerates non-persisted clusters.
        vectors, cost = self._generate(cluster)
        return vectors, ClusterAccess(cluster_id, SOURCE_GENERATED, cost, len(vectors))

    def _generate(self, cluster: Cluster) -> tuple[ClusterVectors, float]:
        members = [self.chunks[m] for m in cluster.member_chunk_ids]
        embeddings, cost = embed_cluster(self.embedder, members, self.cost_model, self.clock)
        ids = np.array(cluster.member_chunk_ids, dtype=np.int64)
        return ClusterVectors(ids, np.stack(embeddings)), cost

    # ------------------------------------------------------------------
    # mutation

    def insert_chunk(self, chunk: DataChunk, doc_id: str = "") -> int:
        """Append a chunk to its nearest cluster; split when it grows too fat.

        Recomputes the cluster's generation latency, re-persists or drops its
        file to keep persistence consistent with the SLO rule, and
        invalidates any cached entry. Returns the id of the cluster that
        finally holds the chunk.
        """
        if chunk.id in self.chunks:
            raise ValueError(f"chunk id {chunk.id} already indexed")
        self.chunks[chunk.id] = chunk
        self.doc_ids[chunk.id] = doc_id
        self._on_mutation()

        if self.index.num_clusters == 0:
            cid = self._next_cluster_id
            self._next_cluster_id += 1
            cluster = Cluster(cluster_id=cid, member_chunk_ids=[chunk.id], gen_latency=0.0)
            self.index.set_cluster(cluster, self.embedder.embed(chunk.text))
            self._chunk_cluster[chunk.id] = cid
            self._refresh_cluster(cid)
            return cid

        emb = self.embedder.embed(chunk.text)
        cid = search_centroids(self.index, emb, 1)[0]
        self.index.clusters[cid].member_chunk_ids.append(chunk.id)
        self._chunk_cluster[chunk.id] = cid
        self._refresh_cluster(cid)

        if self._cluster_mass(cid) > self.split_threshold_chars:
            self._split_cluster(cid)
            return self._chunk_cluster[chunk.id]
        return cid

    def remove_chunk(self, chunk_id: int) -> None:
        """Remove a chunk; shrunken clusters merge into their nearest neighbor."""
        if chunk_id not in self.chunks:
            raise KeyError(f"chunk id {chunk_id} is not indexed")
        cid = self._chunk_cluster.pop(chunk_id)
        del self.chunks[chunk_id]
        self.doc_ids.pop(chunk_id, None)
        self._on_mutation()

        cluster = self.index.clusters[cid]
        cluster.member_chunk_ids.remove(chunk_id)
        if not cluster.member_chunk_ids:
            self._drop_cluster(cid)
            return
        self._refresh_cluster(cid)
        if self._cluster_mass(cid) < self.merge_threshold_chars and self.index.num_clusters > 1:
            self._merge_cluster(cid)

    @property
    def split_threshold_chars(self) -> float:
        return self.config.split_factor * self._build_avg_mass

    @property
    def merge_threshold_chars(self) -> float:
        return self.config.merge_factor * self._build_avg_mass

    def _cluster_mass(self, cluster_id: int) -> int:
        return sum(self.chunks[m].char_len for m in self.index.clusters[cluster_id].member_chunk_ids)

    def _on_mutation(self) -> None:
        self._mutations += 1
        self._flat = None

    def _refresh_cluster(self, cluster_id: int) -> None:
        """Re-profile one cluster and sync its file with the SLO rule."""
        cluster = self.index.clusters[cluster_id]
        members = [self.chunks[m] for m in cluster.member_chunk_ids]
        cluster.gen_latency = estimate_gen_latency(members, self.cost_model, cluster_id).gen_latency
        should_persist = cluster.gen_latency > self.cost_model.slo
        if should_persist:
            write_cluster_file(
                self.store_dir,
                cluster_id,
                regenerate_cluster_vectors(cluster, self.chunks, self.embedder),
            )
        else:
            delete_cluster_file(self.store_dir, cluster_id)
        cluster.persisted = should_persist
        self.cache.invalidate(cluster_id)
        self._materialized.pop(cluster_id, None)

    def _drop_cluster(self, cluster_id: int) -> None:
        delete_cluster_file(self.store_dir, cluster_id)
        self.cache.invalidate(cluster_id)
        self._materialized.pop(cluster_id, None)
        self.index.drop_cluster(cluster_id)

    def _split_cluster(self, cluster_id: int) -> None:
        cluster = self.index.clusters[cluster_id]
        members = list(cluster.member_chunk_ids)
        if len(members) < 2:
            return
        vectors = np.stack([self.embedder.embed(self.chunks[m].text) for m in members])
        seed = (self.config.seed * 1_000_003 + self._mutations) & 0x7FFFFFFF
        result = kmeans(vectors, 2, iters=self.config.kmeans_iters, seed=seed)
        groups = [np.flatnonzero(result.assignments == j) for j in (0, 1)]
        if any(len(g) == 0 for g in groups):
            return

        self._drop_cluster(cluster_id)
        for g in groups:
            new_id = self._next_cluster_id
            self._next_cluster_id += 1
            group_members = [members[i] for i in g]
            centroid = vectors[g].astype(np.float64).mean(axis=0)
            self.index.set_cluster(
                Cluster(cluster_id=new_id, member_chunk_ids=group_members, gen_latency=0.0),
                centroid,
            )
            for m in group_members:
                self._chunk_cluster[m] = new_id
            self._refresh_cluster(new_id)

    def _merge_cluster(self, cluster_id: int) -> None:
        """Fold a shrunken cluster into its nearest neighbor (weighted mean)."""
        victim = self.index.clusters[cluster_id]
        victim_centroid = self.index.centroid_vectors[cluster_id]
        others = [cid for cid in sorted(self.index.clusters) if cid != cluster_id]
        dists = [
            (float(np.sum((self.index.centroid_vectors[cid].astype(np.float64)
                           - victim_centroid.astype(np.float64)) ** 2)), cid)
            for cid in others
        ]
        neighbor_id = min(dists)[1]
        neighbor = self.index.clusters[neighbor_id]

        n_a = len(neighbor.member_chunk_ids)
        n_v = len(victim.member_chunk_ids)
        merged_centroid = (
            n_a * self.index.centroid_vectors[neighbor_id].astype(np.float64)
            + n_v * victim_centroid.astype(np.float64)
        ) / (n_a + n_v)

        members = neighbor.member_chunk_ids + victim.member_chunk_ids
        self._drop_cluster(cluster_id)
        self.index.set_cluster(
            Cluster(cluster_id=neighbor_id, member_chunk_ids=members,
                    gen_latency=neighbor.gen_latency, persisted=neighbor.persisted),
            merged_centroid,
        )
        for m in members:
            self._chunk_cluster[m] = neighbor_id
        self._refresh_cluster(neighbor_id)

    # ------------------------------------------------------------------
    # introspection

    def check_partition_invariant(self) -> None:
        """Raise if cluster member lists do not partition the chunk ids."""
        seen: set[int] = set()
        for cid in sorted(self.index.clusters):
            for m in self.index.clusters[cid].member_chunk_ids:
                if m in seen:
                    raise AssertionError(f"chunk {m} appears in more than one cluster")
                seen.add(m)
        if seen != set(self.chunks):
            missing = set(self.chunks) - seen
            extra = seen - set(self.chunks)
            raise AssertionError(f"partition mismatch: missing={missing} extra={extra}")

    def memory_estimate(self, mode: RetrievalMode) -> int:
        """Resident bytes: centroids plus mode-dependent embedding residency."""
        ids, matrix = self.index.level1_arrays()
        resident = int(matrix.nbytes)
        if mode is RetrievalMode.FLAT:
            resident += len(self.chunks) * self.cost_model.embedding_byte_size
        elif mode is RetrievalMode.IVF:
            resident += len(self.chunks) * self.cost_model.embedding_byte_size
        elif mode is RetrievalMode.CACHED:
            resident += self.cache.current_bytes
        return resident

    def snapshot_searcher(self):
        """Pure query function over fully materialized clusters.

        Thread-safe and state-free: no clock, cache or threshold updates.
        Intended for parallel read-only replay.
        """
        dim = self.config.dimension
        clusters = {
            cid: self.materialized_cluster(cid) for cid in sorted(self.index.clusters)
        }
        index = self.index
        embedder = self.embedder

        def run(query_text: str, nprobe: int, k: int) -> list[SearchHit]:
            query = embedder.embed(query_text)
            if index.num_clusters == 0:
                return []
            probe_ids = search_centroids(index, query, min(nprobe, index.num_clusters))
            per = [
                search_cluster_arrays(clusters[cid].ids, clusters[cid].vectors, query, k)
                for cid in probe_ids
            ]
            return merge_hits(per, k)

        return run


def build_retrieval_config(nprobe: int, k: int, engine: Engine) -> RetrievalConfig:
    return RetrievalConfig(nprobe=nprobe, k=k, slo=engine.cost_model.slo)
