"""CLI behavior: subcommands end to end, exit codes, report determinism."""

from __future__ import annotations

import json

import pytest

from lazyvec.cli import EXIT_CORRUPT, EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = str(root / "c.jsonl")
    trace = str(root / "t.jsonl")
    store = str(root / "store")
    code = main([
        "synth", "--n-chunks", "120", "--n-topics", "8",
        "--chars", "uniform:400:1000", "--skew", "1.2", "--n-queries", "30",
        "--reuse-ratio", "2.0", "--seed", "13",
        "--corpus", corpus, "--trace", trace,
    ])
    assert code == EXIT_OK
    code = main(["build", "--corpus", corpus, "--store", store,
                 "--slo", "0.5", "--chunk-size", "2048"])
    assert code == EXIT_OK
    return {"root": root, "corpus": corpus, "trace": trace, "store": store}


def test_query_writes_report_and_table(workdir, capsys):
    report = str(workdir["root"] / "report.json")
    code, out, _ = run(capsys, "query", "--store", workdir["store"],
                       "--trace", workdir["trace"], "--mode", "cached",
                       "--nprobe", "3", "--k", "5", "--report", report)
    assert code == EXIT_OK
    assert "recall@k" in out
    assert "wall time" in out
    body = json.loads((workdir["root"] / "report.json").read_text())
    assert body["mode"] == "cached"
    assert body["n_queries"] == 30


def test_report_bytes_reproducible(workdir, capsys):
    rep_a = str(workdir["root"] / "a.json")
    rep_b = str(workdir["root"] / "b.json")
    for rep in (rep_a, rep_b):
        code, _, _ = run(capsys, "query", "--store", workdir["store"],
                         "--trace", workdir["trace"], "--mode", "gen-load",
                         "--nprobe", "2", "--k", "5", "--report", rep)
        assert code == EXIT_OK
    assert (workdir["root"] / "a.json").read_bytes() == (workdir["root"] / "b.json").read_bytes()


def test_rebuild_same_seed_identical_manifest(workdir, capsys, tmp_path):
    store_b = str(tmp_path / "store_b")
    code, _, _ = run(capsys, "build", "--corpus", workdir["corpus"],
                     "--store", store_b, "--slo", "0.5", "--chunk-size", "2048")
    assert code == EXIT_OK
    a = (workdir["root"] / "store" / "manifest.egm").read_bytes()
    b = (tmp_path / "store_b" / "manifest.egm").read_bytes()
    assert a == b


def test_sweep_command(workdir, capsys):
    code, out, _ = run(capsys, "sweep", "--store", workdir["store"],
                       "--trace", workdir["trace"], "--target-recall", "0.8",
                       "--k", "5")
    assert code == EXIT_OK
    assert "chosen nprobe" in out


def test_inspect_command(workdir, capsys):
    code, out, _ = run(capsys, "inspect", "--store", workdir["store"])
    assert code == EXIT_OK
    assert "persisted clusters" in out
    code, out, _ = run(capsys, "inspect", "--store", workdir["store"], "--json")
    assert code == EXIT_OK
    assert json.loads(out)["n_clusters"] > 0


def test_parallel_readonly_flag(workdir, capsys):
    code, out, _ = run(capsys, "query", "--store", workdir["store"],
                       "--trace", workdir["trace"], "--mode", "ivf",
                       "--nprobe", "4", "--k", "5", "--parallel-readonly",
                       "--report", str(workdir["root"] / "ro.json"))
    assert code == EXIT_OK


def test_usage_exit_codes(capsys):
    code, _, err = run(capsys, "definitely-not-a-command")
    assert code == EXIT_USAGE
    code, _, err = run(capsys, "build", "--corpus", "x")  # missing --store
    assert code == EXIT_USAGE


def test_unknown_mode_is_usage_error(workdir, capsys):
    code, _, err = run(capsys, "query", "--store", workdir["store"],
                       "--trace", workdir["trace"], "--mode", "warp")
    assert code == EXIT_USAGE


def test_data_error_exit_code_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    lines = [f'{{"id": "a{i}", "text": "ok"}}' for i in range(6)] + ["{oops"]
    bad.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "build", "--corpus", str(bad),
                       "--store", str(tmp_path / "s"))
    assert code == EXIT_DATA
    assert "line 7" in err


def test_corrupt_store_exit_code(workdir, capsys, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(workdir["store"], broken)
    (broken / "manifest.egm").write_bytes(b"EGM1\x01garbage")
    code, _, err = run(capsys, "query", "--store", str(broken),
                       "--trace", workdir["trace"])
    assert code == EXIT_CORRUPT


def test_missing_store_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "inspect", "--store", str(tmp_path / "nope"))
    assert code == EXIT_DATA


def test_config_file_round_trip(workdir, capsys, tmp_path):
    config = tmp_path / "engine.toml"
    config.write_text(
        "[cost]\nslo = 0.5\n\n[chunking]\nsize = 2048\n\n[index]\nseed = 7\n"
    )
    store_c = str(tmp_path / "store_c")
    code, _, _ = run(capsys, "build", "--corpus", workdir["corpus"],
                     "--store", store_c, "--config", str(config))
    assert code == EXIT_OK
    a = (workdir["root"] / "store" / "manifest.egm").read_bytes()
    assert (tmp_path / "store_c" / "manifest.egm").read_bytes() == a


def test_synth_determinism(capsys, tmp_path):
    for name in ("x", "y"):
        code, _, _ = run(capsys, "synth", "--n-chunks", "40", "--n-topics", "4",
                         "--seed", "9", "--corpus", str(tmp_path / f"{name}.jsonl"),
                         "--trace", str(tmp_path / f"{name}t.jsonl"))
        assert code == EXIT_OK
    assert (tmp_path / "x.jsonl").read_bytes() == (tmp_path / "y.jsonl").read_bytes()
    assert (tmp_path / "xt.jsonl").read_bytes() == (tmp_path / "yt.jsonl").read_bytes()
