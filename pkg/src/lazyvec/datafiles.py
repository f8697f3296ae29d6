"""Corpus and query-trace files (JSON Lines) plus the stored chunk table.

Corpus records are ``{"id": str, "text": str}``; trace records are
``{"qid": str, "text": str, "relevant_ids": [str]}`` with ``relevant_ids``
optional. Parse failures always name the offending line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import DataChunk
from .embedder import chunk_text

CHUNKS_NAME = "chunks.jsonl"


class DataFileError(Exception):
    """A corpus/trace/chunk file failed to parse or violates an invariant."""


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    text: str


@dataclass(frozen=True)
class TraceQuery:
    qid: str
    text: str
    relevant_ids: tuple[str, ...] | None = None


def _load_lines(path: Path | str) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFileError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataFileError(f"{path} line {lineno}: expected an object")
        yield lineno, obj


def read_corpus(path: Path | str) -> list[CorpusRecord]:
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    for lineno, obj in _load_lines(path):
        rid = obj.get("id")
        text = obj.get("text")
        if not isinstance(rid, str) or not isinstance(text, str):
            raise DataFileError(f"{path} line {lineno}: need string 'id' and 'text' fields")
        if rid in seen:
            raise DataFileError(f"{path} line {lineno}: duplicate id {rid!r}")
        seen.add(rid)
        records.append(CorpusRecord(rid, text))
    if not records:
        raise DataFileError(f"{path}: corpus is empty")
    return records


def write_corpus(path: Path | str, records: Sequence[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "text": rec.text}, ensure_ascii=False) + "\n")


def read_trace(path: Path | str) -> list[TraceQuery]:
    queries: list[TraceQuery] = []
    seen: set[str] = set()
    for lineno, obj in _load_lines(path):
        qid = obj.get("qid")
        text = obj.get("text")
        if not isinstance(qid, str) or not isinstance(text, str):
            raise DataFileError(f"{path} line {lineno}: need string 'qid' and 'text' fields")
        if qid in seen:
            raise DataFileError(f"{path} line {lineno}: duplicate qid {qid!r}")
        seen.add(qid)
        relevant = obj.get("relevant_ids")
        if relevant is not None:
            if not isinstance(relevant, list) or not all(isinstance(r, str) for r in relevant):
                raise DataFileError(f"{path} line {lineno}: relevant_ids must be a list of strings")
            relevant = tuple(relevant)
        queries.append(TraceQuery(qid, text, relevant))
    if not queries:
        raise DataFileError(f"{path}: trace is empty")
    return queries


def write_trace(path: Path | str, queries: Sequence[TraceQuery]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj: dict = {"qid": q.qid, "text": q.text}
            if q.relevant_ids is not None:
                obj["relevant_ids"] = list(q.relevant_ids)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def chunk_corpus(
    records: Sequence[CorpusRecord], size: int, overlap: int
) -> tuple[list[DataChunk], dict[int, str]]:
    """Window every record; chunk ids are sequential from zero."""
    chunks: list[DataChunk] = []
    doc_ids: dict[int, str] = {}
    next_id = 0
    for rec in records:
        for piece in chunk_text(rec.text, size=size, overlap=overlap):
            chunks.append(DataChunk.from_text(next_id, piece))
            doc_ids[next_id] = rec.id
            next_id += 1
    return chunks, doc_ids


def write_chunks(store_dir: Path | str, chunks: Sequence[DataChunk], doc_ids: dict[int, str]) -> None:
    """Persist the chunk table next to the manifest; retrieval regenerates
    embeddings from these texts after a reload."""
    path = Path(store_dir) / CHUNKS_NAME
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            obj = {"id": chunk.id, "doc": doc_ids.get(chunk.id, ""), "text": chunk.text}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_chunks(store_dir: Path | str) -> tuple[list[DataChunk], dict[int, str]]:
    path = Path(store_dir) / CHUNKS_NAME
    chunks: list[DataChunk] = []
    doc_ids: dict[int, str] = {}
    for lineno, obj in _load_lines(path):
        cid = obj.get("id")
        doc = obj.get("doc")
        text = obj.get("text")
        if not isinstance(cid, int) or not isinstance(doc, str) or not isinstance(text, str):
            raise DataFileError(f"{path} line {lineno}: bad chunk record")
        chunks.append(DataChunk.from_text(cid, text))
        doc_ids[cid] = doc
    return chunks, doc_ids


def dump_json(obj: object, path: Path | str) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
