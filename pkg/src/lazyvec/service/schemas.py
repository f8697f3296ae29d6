"""Request/response models for the retrieval service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Mode = Literal["flat", "ivf", "gen", "gen-load", "cached"]


class ConfigOverrides(BaseModel):
    """Engine knobs a request may override; None keeps the default."""

    dimension: Optional[int] = None
    embed_seed: Optional[int] = None
    normalize: Optional[bool] = None
    chunk_size: Optional[int] = None
    chunk_overlap: Optional[int] = None
    gen_rate: Optional[float] = None
    load_rate: Optional[float] = None
    slo: Optional[float] = None
    n_clusters: Optional[int] = None
    kmeans_iters: Optional[int] = None
    seed: Optional[int] = None
    memory_budget_bytes: Optional[int] = None
    cache_fraction: Optional[float] = None
    cache_capacity_bytes: Optional[int] = None
    decay_factor: Optional[float] = None
    alpha: Optional[float] = None
    threshold_step: Optional[float] = None
    threshold_variant: Optional[str] = None
    split_factor: Optional[float] = None
    merge_factor: Optional[float] = None
    search_cost_per_distance: Optional[float] = None


class BuildRequest(BaseModel):
    corpus_path: str
    store_dir: str
    config_path: Optional[str] = None
    overrides: ConfigOverrides = Field(default_factory=ConfigOverrides)


class BuildSummary(BaseModel):
    store_dir: str
    n_records: int
    n_chunks: int
    n_clusters: int
    persisted_clusters: int
    pruned_bytes: int
    stored_bytes: int
    dimension: int


class HitModel(BaseModel):
    chunk_id: int
    doc_id: str
    distance: float


class ClusterAccessModel(BaseModel):
    cluster_id: int
    source: str
    cost: float
    n_embeddings: int


class TraceModel(BaseModel):
    mode: str
    query_embed_cost: float
    cluster_accesses: list[ClusterAccessModel]
    search_cost: float
    total: float
    slo_met: bool
    was_miss: bool


class QueryRequest(BaseModel):
    store_dir: str
    text: str
    mode: Mode = "cached"
    nprobe: int = Field(default=1, ge=1)
    k: int = Field(default=10, ge=1)


class QueryResponse(BaseModel):
    hits: list[HitModel]
    trace: TraceModel
    clock_now: float


class ReplayRequest(BaseModel):
    store_dir: str
    trace_path: str
    mode: Mode = "cached"
    nprobe: int = Field(default=1, ge=1)
    k: int = Field(default=10, ge=1)
    parallel_readonly: bool = False
    report_path: Optional[str] = None


class ReportModel(BaseModel):
    mode: str
    nprobe: int
    k: int
    n_queries: int
    recall_source: str
    recall_at_k: float
    mean_latency: float
    latency_p50: float
    latency_p95: float
    latency_p99: float
    slo_violations: int
    total_cluster_accesses: int
    unique_clusters_accessed: int
    reuse_ratio: float
    cache_hits: int
    cache_misses: int
    cache_hit_rate: float
    cache_evictions: int
    cache_admissions_rejected: int
    final_threshold: float
    resident_bytes: int
    query_embed_seconds: float
    generation_seconds: float
    load_seconds: float
    per_query_latency: list[float]


class SweepRequest(BaseModel):
    store_dir: str
    trace_path: str
    target_recall: float = Field(default=0.95, gt=0.0, le=1.0)
    k: int = Field(default=10, ge=1)


class SweepPointModel(BaseModel):
    nprobe: int
    recall_at_k: float


class SweepResponse(BaseModel):
    target_recall: float
    k: int
    chosen_nprobe: Optional[int]
    achieved_recall: float
    max_recall: float
    curve: list[SweepPointModel]


class SynthRequest(BaseModel):
    n_chunks: int = Field(ge=1)
    n_topics: int = Field(ge=1)
    chars_dist: str = "uniform:400:1600"
    skew: float = Field(default=1.0, ge=0.0)
    n_queries: int = Field(default=100, ge=1)
    reuse_ratio: float = Field(default=2.0, ge=1.0)
    seed: int = 0
    with_relevance: bool = False
    corpus_path: str
    trace_path: str


class SynthResponse(BaseModel):
    corpus_path: str
    trace_path: str
    n_chunks: int
    n_queries: int
    unique_queries: int
    largest_topic_chars: int
    median_topic_chars: float


class ClusterInfoModel(BaseModel):
    cluster_id: int
    members: int
    gen_latency: float
    persisted: bool


class InspectResponse(BaseModel):
    store_dir: str
    dimension: int
    n_chunks: int
    n_clusters: int
    persisted_clusters: int
    gen_rate: float
    load_rate: float
    slo: float
    kmeans_iters: int
    seed: int
    clusters: list[ClusterInfoModel]


class InsertRequest(BaseModel):
    store_dir: str
    text: str
    doc_id: str = ""
    chunk_id: Optional[int] = None


class InsertResponse(BaseModel):
    chunk_id: int
    cluster_id: int
    n_clusters: int


class RemoveRequest(BaseModel):
    store_dir: str
    chunk_id: int


class RemoveResponse(BaseModel):
    removed: int
    n_clusters: int


class StatsResponse(BaseModel):
    store_dir: str
    clock_now: float
    n_chunks: int
    n_clusters: int
    cache_hits: int
    cache_misses: int
    cache_evictions: int
    cache_admissions_rejected: int
    threshold_value: float
    cache_entry_count: int
    cache_current_bytes: int
    cache_capacity_bytes: int


class ErrorBody(BaseModel):
    kind: Literal["usage", "data", "corrupt"]
    detail: str
