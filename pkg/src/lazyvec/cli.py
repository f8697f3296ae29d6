"""Command-line client for the retrieval service.

The CLI is a thin HTTP client: every subcommand is a request against the
service API. By default it mounts the service in-process (same filesystem,
no separate server needed); pass --server to target a running instance, in
which case all paths are interpreted on the server side.

Exit codes: 0 success, 1 usage error, 2 data error, 3 store corruption.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import httpx

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CORRUPT = 3

_KIND_EXIT = {"usage": EXIT_USAGE, "data": EXIT_DATA, "corrupt": EXIT_CORRUPT}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=600.0)
    # In-process default: mount the ASGI app behind a synchronous client so
    # the CLI works without a separately started server.
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), base_url="http://lazyvec.local",
                      raise_server_exceptions=False)


def _call(client: httpx.Client, method: str, path: str, **kwargs) -> dict:
    resp = client.request(method, path, **kwargs)
    if resp.status_code >= 400:
        try:
            body = resp.json()
        except ValueError:
            body = {}
        kind = body.get("kind")
        detail = body.get("detail", resp.text)
        if kind in _KIND_EXIT:
            print(f"error ({kind}): {detail}", file=sys.stderr)
            raise SystemExit(_KIND_EXIT[kind])
        print(f"error: {detail}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return resp.json()


def _print_table(rows: list[tuple[str, object]]) -> None:
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"  {name:<{width}}  {value}")


def _overrides_from_args(args: argparse.Namespace) -> dict:
    keys = (
        "dimension", "embed_seed", "chunk_size", "chunk_overlap", "gen_rate",
        "load_rate", "slo", "n_clusters", "kmeans_iters", "seed",
        "cache_capacity_bytes", "decay_factor", "alpha", "threshold_step",
        "split_factor", "merge_factor",
    )
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (flags override it)")
    p.add_argument("--dimension", type=int)
    p.add_argument("--embed-seed", dest="embed_seed", type=int)
    p.add_argument("--chunk-size", dest="chunk_size", type=int)
    p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int)
    p.add_argument("--gen-rate", dest="gen_rate", type=float)
    p.add_argument("--load-rate", dest="load_rate", type=float)
    p.add_argument("--slo", type=float)
    p.add_argument("--n-clusters", dest="n_clusters", type=int)
    p.add_argument("--kmeans-iters", dest="kmeans_iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--cache-capacity-bytes", dest="cache_capacity_bytes", type=int)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--threshold-step", dest="threshold_step", type=float)
    p.add_argument("--split-factor", dest="split_factor", type=float)
    p.add_argument("--merge-factor", dest="merge_factor", type=float)


def build_parser() -> _Parser:
    parser = _Parser(prog="lazyvec", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"lazyvec {__version__}")
    parser.add_argument("--server", help="service URL; default runs the service in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="index a corpus into a store directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    _add_override_flags(p)

    p = sub.add_parser("query", help="replay a query trace and report metrics")
    p.add_argument("--store", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--mode", default="cached",
                   help="flat | ivf | gen | gen-load | cached")
    p.add_argument("--nprobe", type=int, default=1)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--report", default="report.json", help="where to write the JSON report")
    p.add_argument("--parallel-readonly", action="store_true",
                   help="replay against an immutable snapshot (no cost accounting)")

    p = sub.add_parser("sweep", help="find the smallest nprobe meeting a recall target")
    p.add_argument("--store", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--target-recall", dest="target_recall", type=float, default=0.95)
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("synth", help="generate a synthetic corpus and query trace")
    p.add_argument("--n-chunks", dest="n_chunks", type=int, required=True)
    p.add_argument("--n-topics", dest="n_topics", type=int, required=True)
    p.add_argument("--chars", dest="chars_dist", default="uniform:400:1600",
                   help="fixed:N | uniform:LO:HI | lognormal:MU:SIGMA")
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--n-queries", dest="n_queries", type=int, default=100)
    p.add_argument("--reuse-ratio", dest="reuse_ratio", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-relevance", action="store_true")
    p.add_argument("--corpus", required=True, help="output corpus path")
    p.add_argument("--trace", required=True, help="output trace path")

    p = sub.add_parser("inspect", help="dump a store's manifest summary")
    p.add_argument("--store", required=True)
    p.add_argument("--json", action="store_true", help="print raw JSON")

    p = sub.add_parser("serve", help="run the service with uvicorn")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8017)

    return parser


def cmd_build(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "corpus_path": args.corpus,
        "store_dir": args.store,
        "config_path": args.config,
        "overrides": _overrides_from_args(args),
    }
    out = _call(client, "POST", "/build", json=body)
    print(f"built {out['store_dir']}")
    _print_table([
        ("records", out["n_records"]),
        ("chunks", out["n_chunks"]),
        ("clusters", out["n_clusters"]),
        ("persisted clusters", out["persisted_clusters"]),
        ("embedding bytes pruned", out["pruned_bytes"]),
        ("embedding bytes stored", out["stored_bytes"]),
    ])
    return EXIT_OK


def cmd_query(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "store_dir": args.store,
        "trace_path": args.trace,
        "mode": args.mode,
        "nprobe": args.nprobe,
        "k": args.k,
        "parallel_readonly": args.parallel_readonly,
        "report_path": args.report,
    }
    started = time.perf_counter()
    out = _call(client, "POST", "/replay", json=body)
    wall = time.perf_counter() - started
    print(f"mode={out['mode']} nprobe={out['nprobe']} k={out['k']} "
          f"queries={out['n_queries']}")
    _print_table([
        ("recall@k (" + out["recall_source"] + ")", f"{out['recall_at_k']:.4f}"),
        ("mean simulated latency", f"{out['mean_latency']:.6f} s"),
        ("p50 / p95 / p99", f"{out['latency_p50']:.6f} / {out['latency_p95']:.6f} / "
                            f"{out['latency_p99']:.6f} s"),
        ("slo violations", out["slo_violations"]),
        ("cluster accesses (total/unique)",
         f"{out['total_cluster_accesses']}/{out['unique_clusters_accessed']}"),
        ("reuse ratio", f"{out['reuse_ratio']:.3f}"),
        ("cache hits/misses", f"{out['cache_hits']}/{out['cache_misses']} "
                              f"(rate {out['cache_hit_rate']:.3f})"),
        ("cache evictions", out["cache_evictions"]),
        ("admissions rejected", out["cache_admissions_rejected"]),
        ("final threshold", f"{out['final_threshold']:.4f} s"),
        ("resident bytes", out["resident_bytes"]),
        ("generation seconds", f"{out['generation_seconds']:.6f}"),
        ("load seconds", f"{out['load_seconds']:.6f}"),
    ])
    if args.report:
        print(f"report written to {args.report}")
    print(f"wall time (not simulated): {wall:.3f} s")
    return EXIT_OK


def cmd_sweep(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "store_dir": args.store,
        "trace_path": args.trace,
        "target_recall": args.target_recall,
        "k": args.k,
    }
    out = _call(client, "POST", "/sweep", json=body)
    print(f"target recall {out['target_recall']:.3f} @ k={out['k']}")
    for pt in out["curve"]:
        print(f"  nprobe {pt['nprobe']:>5}  recall {pt['recall_at_k']:.4f}")
    if out["chosen_nprobe"] is None:
        print(f"target unreachable; max recall {out['max_recall']:.4f} at full probe")
    else:
        print(f"chosen nprobe: {out['chosen_nprobe']} "
              f"(recall {out['achieved_recall']:.4f})")
    return EXIT_OK


def cmd_synth(client: httpx.Client, args: argparse.Namespace) -> int:
    body = {
        "n_chunks": args.n_chunks,
        "n_topics": args.n_topics,
        "chars_dist": args.chars_dist,
        "skew": args.skew,
        "n_queries": args.n_queries,
        "reuse_ratio": args.reuse_ratio,
        "seed": args.seed,
        "with_relevance": args.with_relevance,
        "corpus_path": args.corpus,
        "trace_path": args.trace,
    }
    out = _call(client, "POST", "/synth", json=body)
    print(f"wrote {out['corpus_path']} ({out['n_chunks']} chunks) and "
          f"{out['trace_path']} ({out['n_queries']} queries, "
          f"{out['unique_queries']} unique)")
    _print_table([
        ("largest topic chars", out["largest_topic_chars"]),
        ("median topic chars", out["median_topic_chars"]),
    ])
    return EXIT_OK


def cmd_inspect(client: httpx.Client, args: argparse.Namespace) -> int:
    out = _call(client, "GET", "/inspect", params={"store_dir": args.store})
    if args.json:
        print(json.dumps(out, sort_keys=True, indent=2))
        return EXIT_OK
    _print_table([
        ("store", out["store_dir"]),
        ("dimension", out["dimension"]),
        ("chunks", out["n_chunks"]),
        ("clusters", out["n_clusters"]),
        ("persisted clusters", out["persisted_clusters"]),
        ("gen rate", f"{out['gen_rate']} chars/s"),
        ("load rate", f"{out['load_rate']} B/s"),
        ("slo", f"{out['slo']} s"),
    ])
    heavy = [c for c in out["clusters"] if c["persisted"]]
    heavy.sort(key=lambda c: -c["gen_latency"])
    for c in heavy[:10]:
        print(f"    cluster {c['cluster_id']:>5}  members {c['members']:>5}  "
              f"gen {c['gen_latency']:.3f} s  persisted")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "serve":
        return cmd_serve(args)

    handlers = {
        "build": cmd_build,
        "query": cmd_query,
        "sweep": cmd_sweep,
        "synth": cmd_synth,
        "inspect": cmd_inspect,
    }
    try:
        with _client(args.server) as client:
            return handlers[args.command](client, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except httpx.HTTPError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
