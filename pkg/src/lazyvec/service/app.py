"""FastAPI service wrapping the engine.

One process serves any number of store directories: engines are opened
lazily, kept in a registry, and all access to one engine is serialized
through its lock (retrieval mutates clock/cache/threshold state).

Application errors carry a machine-readable ``kind`` so thin clients can map
them to exit codes: usage (bad arguments), data (unparseable inputs) and
corrupt (store-level damage).
"""

from __future__ import annotations

import statistics
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import EngineConfig, config_from_toml
from ..datafiles import (
    DataFileError,
    chunk_corpus,
    dump_json,
    read_corpus,
    read_trace,
    write_corpus,
    write_trace,
)
from ..core import DataChunk
from ..engine import Engine, RetrievalConfig, parse_mode
from ..harness import replay, sweep
from ..storage import StoreCorruptError, StoreError, UnbuiltStoreError
from ..workload import SynthSpec, generate
from . import schemas


class ServiceError(Exception):
    def __init__(self, kind: str, detail: str, status: int = 400) -> None:
        super().__init__(detail)
        self.kind = kind
        self.detail = detail
        self.status = status


class EngineRegistry:
    """Engines keyed by resolved store path, each with its own lock."""

    def __init__(self) -> None:
        self._engines: dict[str, tuple[Engine, threading.Lock]] = {}
        self._guard = threading.Lock()

    def put(self, store_dir: Path, engine: Engine) -> None:
        key = str(store_dir.resolve())
        with self._guard:
            self._engines[key] = (engine, threading.Lock())

    def get(self, store_dir: str) -> tuple[Engine, threading.Lock]:
        key = str(Path(store_dir).resolve())
        with self._guard:
            entry = self._engines.get(key)
            if entry is not None:
                return entry
        engine = Engine.load(store_dir)
        lock = threading.Lock()
        with self._guard:
            self._engines.setdefault(key, (engine, lock))
            return self._engines[key]

    def drop(self, store_dir: str) -> None:
        key = str(Path(store_dir).resolve())
        with self._guard:
            self._engines.pop(key, None)


def _load_config(req_config_path: str | None, overrides: schemas.ConfigOverrides) -> EngineConfig:
    config = EngineConfig()
    if req_config_path:
        config = config_from_toml(req_config_path, base=config)
    return config.with_overrides(**overrides.model_dump())


def _trace_model(trace) -> schemas.TraceModel:
    return schemas.TraceModel(
        mode=trace.mode,
        query_embed_cost=trace.query_embed_cost,
        cluster_accesses=[
            schemas.ClusterAccessModel(
                cluster_id=a.cluster_id, source=a.source, cost=a.cost,
                n_embeddings=a.n_embeddings,
            )
            for a in trace.cluster_accesses
        ],
        search_cost=trace.search_cost,
        total=trace.total,
        slo_met=trace.slo_met,
        was_miss=trace.was_miss,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="lazyvec", version=__version__,
                  description="Memory-budgeted two-level vector retrieval service")
    registry = EngineRegistry()
    app.state.registry = registry

    @app.exception_handler(ServiceError)
    async def service_error(_: Request, exc: ServiceError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status, content={"kind": exc.kind, "detail": exc.detail}
        )

    def wrap_errors(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except DataFileError as exc:
                raise ServiceError("data", str(exc), 422) from exc
            except (StoreCorruptError,) as exc:
                raise ServiceError("corrupt", str(exc), 409) from exc
            except UnbuiltStoreError as exc:
                raise ServiceError("data", str(exc), 404) from exc
            except StoreError as exc:
                raise ServiceError("corrupt", str(exc), 409) from exc
            except (ValueError, KeyError) as exc:
                raise ServiceError("usage", str(exc), 400) from exc

        return run

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/build", response_model=schemas.BuildSummary)
    def build(req: schemas.BuildRequest) -> schemas.BuildSummary:
        def work() -> schemas.BuildSummary:
            config = _load_config(req.config_path, req.overrides)
            records = read_corpus(req.corpus_path)
            chunks, doc_ids = chunk_corpus(records, config.chunk_size, config.chunk_overlap)
            engine = Engine.build(chunks, doc_ids, req.store_dir, config)
            registry.put(Path(req.store_dir), engine)
            persisted = sum(1 for c in engine.index.clusters.values() if c.persisted)
            stored_chunks = sum(
                len(c.member_chunk_ids)
                for c in engine.index.clusters.values()
                if c.persisted
            )
            byte_size = engine.cost_model.embedding_byte_size
            return schemas.BuildSummary(
                store_dir=req.store_dir,
                n_records=len(records),
                n_chunks=len(chunks),
                n_clusters=engine.index.num_clusters,
                persisted_clusters=persisted,
                pruned_bytes=(len(chunks) - stored_chunks) * byte_size,
                stored_bytes=stored_chunks * byte_size,
                dimension=config.dimension,
            )

        return wrap_errors(work)()

    @app.post("/query", response_model=schemas.QueryResponse)
    def query(req: schemas.QueryRequest) -> schemas.QueryResponse:
        def work() -> schemas.QueryResponse:
            engine, lock = registry.get(req.store_dir)
            mode = parse_mode(req.mode)
            with lock:
                config = RetrievalConfig(nprobe=req.nprobe, k=req.k)
                hits, trace = engine.retrieve(req.text, config, mode=mode)
                now = engine.clock.now
            return schemas.QueryResponse(
                hits=[
                    schemas.HitModel(
                        chunk_id=h.chunk_id,
                        doc_id=engine.doc_ids.get(h.chunk_id, ""),
                        distance=h.distance,
                    )
                    for h in hits
                ],
                trace=_trace_model(trace),
                clock_now=now,
            )

        return wrap_errors(work)()

    @app.post("/replay", response_model=schemas.ReportModel)
    def replay_trace(req: schemas.ReplayRequest) -> schemas.ReportModel:
        def work() -> schemas.ReportModel:
            engine, lock = registry.get(req.store_dir)
            mode = parse_mode(req.mode)
            trace = read_trace(req.trace_path)
            with lock:
                report = replay(
                    engine, trace, mode, req.nprobe, req.k,
                    parallel_readonly=req.parallel_readonly,
                )
            if req.report_path:
                dump_json(report.to_dict(), req.report_path)
            return schemas.ReportModel(**report.to_dict())

        return wrap_errors(work)()

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep_trace(req: schemas.SweepRequest) -> schemas.SweepResponse:
        def work() -> schemas.SweepResponse:
            engine, lock = registry.get(req.store_dir)
            trace = read_trace(req.trace_path)
            with lock:
                result = sweep(engine, trace, req.target_recall, req.k)
            return schemas.SweepResponse(
                target_recall=result.target_recall,
                k=result.k,
                chosen_nprobe=result.chosen_nprobe,
                achieved_recall=result.achieved_recall,
                max_recall=result.max_recall,
                curve=[
                    schemas.SweepPointModel(nprobe=p.nprobe, recall_at_k=p.recall_at_k)
                    for p in result.curve
                ],
            )

        return wrap_errors(work)()

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
        def work() -> schemas.SynthResponse:
            spec = SynthSpec(
                n_chunks=req.n_chunks,
                n_topics=req.n_topics,
                chars_dist=req.chars_dist,
                skew=req.skew,
                n_queries=req.n_queries,
                reuse_ratio=req.reuse_ratio,
                seed=req.seed,
                with_relevance=req.with_relevance,
            )
            records, queries, stats = generate(spec)
            write_corpus(req.corpus_path, records)
            write_trace(req.trace_path, queries)
            return schemas.SynthResponse(
                corpus_path=req.corpus_path,
                trace_path=req.trace_path,
                n_chunks=len(records),
                n_queries=len(queries),
                unique_queries=stats.unique_queries,
                largest_topic_chars=max(stats.topic_char_mass),
                median_topic_chars=statistics.median(stats.topic_char_mass),
            )

        return wrap_errors(work)()

    @app.get("/inspect", response_model=schemas.InspectResponse)
    def inspect(store_dir: str) -> schemas.InspectResponse:
        def work() -> schemas.InspectResponse:
            engine, lock = registry.get(store_dir)
            with lock:
                clusters = [
                    schemas.ClusterInfoModel(
                        cluster_id=cid,
                        members=len(engine.index.clusters[cid].member_chunk_ids),
                        gen_latency=engine.index.clusters[cid].gen_latency,
                        persisted=engine.index.clusters[cid].persisted,
                    )
                    for cid in sorted(engine.index.clusters)
                ]
                return schemas.InspectResponse(
                    store_dir=store_dir,
                    dimension=engine.config.dimension,
                    n_chunks=len(engine.chunks),
                    n_clusters=engine.index.num_clusters,
                    persisted_clusters=sum(1 for c in clusters if c.persisted),
                    gen_rate=engine.cost_model.gen_rate,
                    load_rate=engine.cost_model.load_rate,
                    slo=engine.cost_model.slo,
                    kmeans_iters=engine.index.kmeans_iters,
                    seed=engine.index.seed,
                    clusters=clusters,
                )

        return wrap_errors(work)()

    @app.post("/insert", response_model=schemas.InsertResponse)
    def insert(req: schemas.InsertRequest) -> schemas.InsertResponse:
        def work() -> schemas.InsertResponse:
            engine, lock = registry.get(req.store_dir)
            with lock:
                chunk_id = req.chunk_id
                if chunk_id is None:
                    chunk_id = max(engine.chunks, default=-1) + 1
                cluster_id = engine.insert_chunk(
                    DataChunk.from_text(chunk_id, req.text), doc_id=req.doc_id
                )
                engine.save()
                return schemas.InsertResponse(
                    chunk_id=chunk_id,
                    cluster_id=cluster_id,
                    n_clusters=engine.index.num_clusters,
                )

        return wrap_errors(work)()

    @app.post("/remove", response_model=schemas.RemoveResponse)
    def remove(req: schemas.RemoveRequest) -> schemas.RemoveResponse:
        def work() -> schemas.RemoveResponse:
            engine, lock = registry.get(req.store_dir)
            with lock:
                engine.remove_chunk(req.chunk_id)
                engine.save()
                return schemas.RemoveResponse(
                    removed=req.chunk_id, n_clusters=engine.index.num_clusters
                )

        return wrap_errors(work)()

    @app.get("/stats", response_model=schemas.StatsResponse)
    def stats(store_dir: str) -> schemas.StatsResponse:
        def work() -> schemas.StatsResponse:
            engine, lock = registry.get(store_dir)
            with lock:
                s = engine.cache.stats()
                return schemas.StatsResponse(
                    store_dir=store_dir,
                    clock_now=engine.clock.now,
                    n_chunks=len(engine.chunks),
                    n_clusters=engine.index.num_clusters,
                    cache_hits=s.hits,
                    cache_misses=s.misses,
                    cache_evictions=s.evictions,
                    cache_admissions_rejected=s.admissions_rejected,
                    threshold_value=s.threshold_value,
                    cache_entry_count=s.entry_count,
                    cache_current_bytes=s.current_bytes,
                    cache_capacity_bytes=s.capacity_bytes,
                )

        return wrap_errors(work)()

    return app
