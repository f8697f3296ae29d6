"""Trace replay, recall scoring, percentile reporting and the nprobe sweep."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .core import SearchHit
from .datafiles import TraceQuery
from .engine import Engine, RetrievalConfig, RetrievalMode
from .index import flat_search


def nearest_rank_percentile(values: list[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class MetricsReport:
    """Everything one replay produces; serializes deterministically."""

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
    per_query_latency: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _recall_against_oracle(hits: list[SearchHit], oracle: list[SearchHit], k: int) -> float:
    got = {h.chunk_id for h in hits}
    want = {h.chunk_id for h in oracle}
    if not want:
        return 1.0
    return len(got & want) / len(want)


def _recall_against_relevant(
    hits: list[SearchHit], relevant: tuple[str, ...], doc_ids: dict[int, str]
) -> float:
    if not relevant:
        return 1.0
    got_docs = {doc_ids.get(h.chunk_id, "") for h in hits}
    return len(got_docs & set(relevant)) / len(set(relevant))


def replay(
    engine: Engine,
    trace: list[TraceQuery],
    mode: RetrievalMode,
    nprobe: int,
    k: int,
    parallel_readonly: bool = False,
    workers: int = 4,
) -> MetricsReport:
    """Replay a trace in one mode, starting from a fresh session.

    Recall is scored against the flat-index oracle unless every query carries
    relevant_ids, in which case document-level relevance is used. The
    parallel_readonly path answers queries from an immutable snapshot without
    touching clock/cache state; its latency fields are zero by construction.
    """
    engine.new_session()
    use_relevance = all(q.relevant_ids is not None for q in trace) and len(trace) > 0
    flat = engine.flat_index()

    latencies: list[float] = []
    recalls: list[float] = []
    cluster_counts: dict[int, int] = {}
    slo_violations = 0
    query_embed_seconds = 0.0
    generation_seconds = 0.0
    load_seconds = 0.0

    if parallel_readonly:
        run = engine.snapshot_searcher()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_hits = list(pool.map(lambda q: run(q.text, nprobe, k), trace))
        for q, hits in zip(trace, all_hits):
            if use_relevance:
                recalls.append(_recall_against_relevant(hits, q.relevant_ids or (), engine.doc_ids))
            else:
                oracle = flat_search(flat, engine.embedder.embed(q.text), k)
                recalls.append(_recall_against_oracle(hits, oracle, k))
    else:
        config = RetrievalConfig(nprobe=nprobe, k=k, slo=engine.cost_model.slo)
        for q in trace:
            hits, tr = engine.retrieve(q.text, config, mode=mode)
            latencies.append(tr.total)
            if not tr.slo_met:
                slo_violations += 1
            query_embed_seconds += tr.query_embed_cost
            for access in tr.cluster_accesses:
                cluster_counts[access.cluster_id] = cluster_counts.get(access.cluster_id, 0) + 1
                if access.source == "generated":
                    generation_seconds += access.cost
                elif access.source == "persisted-load":
                    load_seconds += access.cost
            if use_relevance:
                recalls.append(_recall_against_relevant(hits, q.relevant_ids or (), engine.doc_ids))
            else:
                oracle = flat_search(flat, engine.embedder.embed(q.text), k)
                recalls.append(_recall_against_oracle(hits, oracle, k))

    total_accesses = sum(cluster_counts.values())
    unique_clusters = len(cluster_counts)
    stats = engine.cache.stats()
    return MetricsReport(
        mode=mode.value,
        nprobe=nprobe,
        k=k,
        n_queries=len(trace),
        recall_source="relevant-ids" if use_relevance else "flat-oracle",
        recall_at_k=sum(recalls) / len(recalls) if recalls else 0.0,
        mean_latency=sum(latencies) / len(latencies) if latencies else 0.0,
        latency_p50=nearest_rank_percentile(latencies, 50),
        latency_p95=nearest_rank_percentile(latencies, 95),
        latency_p99=nearest_rank_percentile(latencies, 99),
        slo_violations=slo_violations,
        total_cluster_accesses=total_accesses,
        unique_clusters_accessed=unique_clusters,
        reuse_ratio=(total_accesses / unique_clusters) if unique_clusters else 0.0,
        cache_hits=stats.hits,
        cache_misses=stats.misses,
        cache_hit_rate=stats.hits / (stats.hits + stats.misses)
        if stats.hits + stats.misses else 0.0,
        cache_evictions=stats.evictions,
        cache_admissions_rejected=stats.admissions_rejected,
        final_threshold=stats.threshold_value,
        resident_bytes=engine.memory_estimate(mode),
        query_embed_seconds=query_embed_seconds,
        generation_seconds=generation_seconds,
        load_seconds=load_seconds,
        per_query_latency=latencies,
    )


@dataclass
class SweepPoint:
    nprobe: int
    recall_at_k: float


@dataclass
class SweepResult:
    target_recall: float
    k: int
    chosen_nprobe: int | None
    achieved_recall: float
    max_recall: float
    curve: list[SweepPoint]

    def to_dict(self) -> dict:
        return {
            "target_recall": self.target_recall,
            "k": self.k,
            "chosen_nprobe": self.chosen_nprobe,
            "achieved_recall": self.achieved_recall,
            "max_recall": self.max_recall,
            "curve": [{"nprobe": p.nprobe, "recall_at_k": p.recall_at_k} for p in self.curve],
        }


def _recall_at(engine: Engine, trace: list[TraceQuery], nprobe: int, k: int,
               oracle_hits: list[list[SearchHit]]) -> float:
    """Mean recall against the flat oracle at one nprobe (ivf search)."""
    run = engine.snapshot_searcher()
    recalls = [
        _recall_against_oracle(run(q.text, nprobe, k), oracle, k)
        for q, oracle in zip(trace, oracle_hits)
    ]
    return sum(recalls) / len(recalls)


def sweep(engine: Engine, trace: list[TraceQuery], target_recall: float, k: int) -> SweepResult:
    """Smallest nprobe whose recall@k against the flat oracle meets the target.

    Recall is non-decreasing in nprobe, so after probing a doubling ladder
    for the printed curve the exact minimum is found by bisection. When even
    a full probe misses the target, chosen_nprobe is None and the maximum
    achievable recall is reported.
    """
    if not 0.0 < target_recall <= 1.0:
        raise ValueError("target_recall must be in (0, 1]")
    big_k = engine.index.num_clusters
    if big_k == 0:
        raise ValueError("index has no clusters")
    flat = engine.flat_index()
    oracle_hits = [flat_search(flat, engine.embedder.embed(q.text), k) for q in trace]

    ladder = []
    p = 1
    while p < big_k:
        ladder.append(p)
        p *= 2
    ladder.append(big_k)

    curve = [SweepPoint(p, _recall_at(engine, trace, p, k, oracle_hits)) for p in ladder]
    by_probe = {pt.nprobe: pt.recall_at_k for pt in curve}
    max_recall = by_probe[big_k]
    if max_recall < target_recall:
        return SweepResult(target_recall, k, None, max_recall, max_recall, curve)

    # Bisect between the last failing and first passing ladder points.
    lo = 1
    hi = big_k
    for pt in curve:
        if pt.recall_at_k >= target_recall:
            hi = pt.nprobe
            break
        lo = pt.nprobe + 1
    while lo < hi:
        mid = (lo + hi) // 2
        r = by_probe.get(mid)
        if r is None:
            r = _recall_at(engine, trace, mid, k, oracle_hits)
            by_probe[mid] = r
        if r >= target_recall:
            hi = mid
        else:
            lo = mid + 1
    return SweepResult(target_recall, k, hi, by_probe.get(hi, max_recall), max_recall, curve)
