"""On-disk persistence: per-cluster embedding files and the index manifest.

Clusters whose profiled generation latency exceeds the SLO are written to
``<store_dir>/clusters/<cluster_id>.egv`` so a query can load exactly one
cluster back instead of regenerating it. The manifest
(``<store_dir>/manifest.egm``) is written last and is the marker that a store
directory is built at all; stray cluster files without a manifest are
ignored.

File formats (all little-endian):

``.egv``   magic ``EGV1`` | u32 dimension | u32 count | count x i64 chunk ids
           | count x dimension x f32 row-major payload

``.egm``   magic ``EGM1`` | u8 version | u32 dimension | i64 embedder seed
           | u8 normalize | f64 gen_rate | f64 load_rate | f64 slo
           | u32 embedding_byte_size | u32 kmeans_iters | i64 index seed
           | u32 n_clusters | per cluster: i64 id | u8 persisted
           | f64 gen_latency | u32 member_count | member ids (i64)
           | centroid (dimension x f32)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .core import DTYPE, CostModel, DataChunk, SimClock
from .embedder import Embedder, EmbedderSpec, estimate_load_latency
from .index import Cluster, ClusterVectors, IvfIndex

CLUSTER_MAGIC = b"EGV1"
MANIFEST_MAGIC = b"EGM1"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.egm"
CLUSTERS_SUBDIR = "clusters"


class StoreError(Exception):
    """Base class for persistence failures."""


class ClusterNotPersistedError(StoreError):
    """Requested cluster has no stored embedding file."""


class StoreCorruptError(StoreError):
    """Stored bytes do not match the documented layout."""


class ManifestVersionError(StoreCorruptError):
    """Manifest was written by an unknown format version."""


class UnbuiltStoreError(StoreError):
    """Directory has no manifest and is treated as unbuilt."""


@dataclass(frozen=True)
class PersistenceDecision:
    cluster_id: int
    gen_latency: float
    persisted: bool


def manifest_path(store_dir: Path | str) -> Path:
    return Path(store_dir) / MANIFEST_NAME


def cluster_file_path(store_dir: Path | str, cluster_id: int) -> Path:
    return Path(store_dir) / CLUSTERS_SUBDIR / f"{cluster_id}.egv"


def store_is_built(store_dir: Path | str) -> bool:
    return manifest_path(store_dir).is_file()


def write_cluster_file(store_dir: Path | str, cluster_id: int, vectors: ClusterVectors) -> Path:
    """Write one cluster's embeddings; bytes are exact and round-trip."""
    path = cluster_file_path(store_dir, cluster_id)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        dim = vectors.vectors.shape[1]
        payload = np.ascontiguousarray(vectors.vectors, dtype=DTYPE)
        with open(path, "wb") as fh:
            fh.write(CLUSTER_MAGIC)
            fh.write(struct.pack("<II", dim, len(vectors)))
            fh.write(vectors.ids.astype("<i8").tobytes())
            fh.write(payload.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise StoreError(f"failed to write cluster {cluster_id}: {exc}") from exc
    return path


def read_cluster_file(store_dir: Path | str, cluster_id: int) -> ClusterVectors:
    path = cluster_file_path(store_dir, cluster_id)
    if not path.is_file():
        raise ClusterNotPersistedError(f"cluster {cluster_id} is not persisted in {store_dir}")
    data = path.read_bytes()
    header = struct.calcsize("<4sII")
    if len(data) < header or data[:4] != CLUSTER_MAGIC:
        raise StoreCorruptError(f"{path}: bad magic")
    dim, count = struct.unpack_from("<II", data, 4)
    expected = header + count * 8 + count * dim * 4
    if len(data) != expected:
        raise StoreCorruptError(f"{path}: expected {expected} bytes, found {len(data)}")
    ids = np.frombuffer(data, dtype="<i8", count=count, offset=header)
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=header + count * 8)
    vectors = vectors.reshape(count, dim)
    if count and not np.all(np.isfinite(vectors)):
        raise StoreCorruptError(f"{path}: non-finite embedding components")
    return ClusterVectors(ids.copy(), vectors.copy())


def delete_cluster_file(store_dir: Path | str, cluster_id: int) -> None:
    try:
        cluster_file_path(store_dir, cluster_id).unlink()
    except FileNotFoundError:
        pass


def regenerate_cluster_vectors(
    cluster: Cluster, chunks: Mapping[int, DataChunk], embedder: Embedder
) -> ClusterVectors:
    """Member embeddings in member order, straight from the embedder."""
    ids = np.array(cluster.member_chunk_ids, dtype=np.int64)
    if len(cluster.member_chunk_ids) == 0:
        return ClusterVectors(ids, np.empty((0, embedder.dimension), dtype=DTYPE))
    vectors = np.stack([embedder.embed(chunks[m].text) for m in cluster.member_chunk_ids])
    return ClusterVectors(ids, vectors)


def profile_and_persist(
    index: IvfIndex,
    chunks: Mapping[int, DataChunk],
    embedder: Embedder,
    cost_model: CostModel,
    store_dir: Path | str,
) -> list[PersistenceDecision]:
    """Persist every cluster whose generation latency strictly exceeds the SLO.

    Persistence is decided purely from the profiled character counts; the
    inequality is strict, so a cluster sitting exactly at the SLO is not
    persisted. Updates each cluster's ``persisted`` flag and returns the
    decision list for audit.
    """
    decisions: list[PersistenceDecision] = []
    for cid in sorted(index.clusters):
        cluster = index.clusters[cid]
        persist = cluster.gen_latency > cost_model.slo
        if persist:
            write_cluster_file(store_dir, cid, regenerate_cluster_vectors(cluster, chunks, embedder))
        else:
            delete_cluster_file(store_dir, cid)
        cluster.persisted = persist
        decisions.append(PersistenceDecision(cid, cluster.gen_latency, persist))
    return decisions


def load_persisted(
    store_dir: Path | str, cluster_id: int, cost_model: CostModel, clock: SimClock
) -> ClusterVectors:
    """Read one persisted cluster, charging the clock for the bytes moved."""
    vectors = read_cluster_file(store_dir, cluster_id)
    clock.charge(estimate_load_latency(len(vectors), cost_model))
    return vectors


@dataclass
class ClusterRecord:
    cluster_id: int
    persisted: bool
    gen_latency: float
    member_chunk_ids: list[int]
    centroid: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterRecord):
            return NotImplemented
        return (
            self.cluster_id == other.cluster_id
            and self.persisted == other.persisted
            and self.gen_latency == other.gen_latency
            and self.member_chunk_ids == other.member_chunk_ids
            and np.array_equal(self.centroid, other.centroid)
        )


@dataclass
class IndexManifest:
    version: int
    dimension: int
    embedder: EmbedderSpec
    cost_model: CostModel
    kmeans_iters: int
    seed: int
    clusters: list[ClusterRecord]


def build_manifest(
    index: IvfIndex, embedder_spec: EmbedderSpec, cost_model: CostModel
) -> IndexManifest:
    records = [
        ClusterRecord(
            cluster_id=cid,
            persisted=index.clusters[cid].persisted,
            gen_latency=index.clusters[cid].gen_latency,
            member_chunk_ids=list(index.clusters[cid].member_chunk_ids),
            centroid=np.asarray(index.centroid_vectors[cid], dtype=DTYPE),
        )
        for cid in sorted(index.clusters)
    ]
    return IndexManifest(
        version=MANIFEST_VERSION,
        dimension=index.dimension,
        embedder=embedder_spec,
        cost_model=cost_model,
        kmeans_iters=index.kmeans_iters,
        seed=index.seed,
        clusters=records,
    )


def write_manifest(store_dir: Path | str, manifest: IndexManifest) -> Path:
    """Serialize the manifest; the write is atomic (tmp file + rename)."""
    path = manifest_path(store_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".egm.tmp")
    with open(tmp, "wb") as fh:
        _write_manifest_bytes(fh, manifest)
    os.replace(tmp, path)
    return path


def _write_manifest_bytes(fh: BinaryIO, m: IndexManifest) -> None:
    fh.write(MANIFEST_MAGIC)
    fh.write(
        struct.pack(
            "<BIqBdddIIqI",
            m.version,
            m.dimension,
            m.embedder.seed,
            1 if m.embedder.normalize else 0,
            m.cost_model.gen_rate,
            m.cost_model.load_rate,
            m.cost_model.slo,
            m.cost_model.embedding_byte_size,
            m.kmeans_iters,
            m.seed,
            len(m.clusters),
        )
    )
    for rec in m.clusters:
        fh.write(
            struct.pack(
                "<qBdI",
                rec.cluster_id,
                1 if rec.persisted else 0,
                rec.gen_latency,
                len(rec.member_chunk_ids),
            )
        )
        fh.write(np.asarray(rec.member_chunk_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(rec.centroid, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, path: Path) -> None:
        self.data = data
        self.off = 0
        self.path = path

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise StoreCorruptError(f"{self.path}: truncated manifest")
        vals = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return vals

    def take_bytes(self, size: int) -> bytes:
        if self.off + size > len(self.data):
            raise StoreCorruptError(f"{self.path}: truncated manifest")
        out = self.data[self.off : self.off + size]
        self.off += size
        return out


def read_manifest(store_dir: Path | str) -> IndexManifest:
    path = manifest_path(store_dir)
    if not path.is_file():
        raise UnbuiltStoreError(f"{store_dir} has no {MANIFEST_NAME}; store is unbuilt")
    r = _Reader(path.read_bytes(), path)
    if r.take_bytes(4) != MANIFEST_MAGIC:
        raise StoreCorruptError(f"{path}: bad magic")
    (version,) = r.take("<B")
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(f"{path}: unsupported manifest version {version}")
    (dimension, emb_seed, normalize, gen_rate, load_rate, slo, byte_size, iters, seed, n) = r.take(
        "<IqBdddIIqI"
    )
    clusters: list[ClusterRecord] = []
    for _ in range(n):
        cid, persisted, gen_latency, count = r.take("<qBdI")
        member_ids = np.frombuffer(r.take_bytes(count * 8), dtype="<i8").tolist()
        centroid = np.frombuffer(r.take_bytes(dimension * 4), dtype="<f4").copy()
        clusters.append(ClusterRecord(cid, bool(persisted), gen_latency, member_ids, centroid))
    if r.off != len(r.data):
        raise StoreCorruptError(f"{path}: {len(r.data) - r.off} trailing bytes")
    return IndexManifest(
        version=version,
        dimension=dimension,
        embedder=EmbedderSpec(dimension=dimension, seed=emb_seed, normalize=bool(normalize)),
        cost_model=CostModel(gen_rate, load_rate, slo, byte_size),
        kmeans_iters=iters,
        seed=seed,
        clusters=clusters,
    )


def index_from_manifest(manifest: IndexManifest) -> IvfIndex:
    index = IvfIndex(
        dimension=manifest.dimension,
        kmeans_iters=manifest.kmeans_iters,
        seed=manifest.seed,
    )
    for rec in manifest.clusters:
        index.set_cluster(
            Cluster(
                cluster_id=rec.cluster_id,
                member_chunk_ids=list(rec.member_chunk_ids),
                gen_latency=rec.gen_latency,
                persisted=rec.persisted,
            ),
            rec.centroid,
        )
    return index
