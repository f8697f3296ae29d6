"""Seeded synthetic corpora and query traces with power-law topic skew.

Each topic owns a small private vocabulary, so chunks of one topic embed near
each other and queries built from topic words retrieve that topic's chunks.
Topic sizes follow ``weight(t) = (t+1) ** -skew``; with skew around 1.5 a
handful of topics carry most of the character mass, which is the tail-heavy
regime the selective-persistence rule exists for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datafiles import CorpusRecord, TraceQuery

VOCAB_PER_TOPIC = 48
QUERY_WORDS_DEFAULT = 4


@dataclass(frozen=True)
class SynthSpec:
    n_chunks: int
    n_topics: int
    chars_dist: str = "uniform:400:1600"
    skew: float = 1.0
    n_queries: int = 100
    reuse_ratio: float = 2.0
    seed: int = 0
    query_words: int = QUERY_WORDS_DEFAULT
    with_relevance: bool = False

    def __post_init__(self) -> None:
        if self.n_chunks < 1 or self.n_topics < 1 or self.n_queries < 1:
            raise ValueError("n_chunks, n_topics and n_queries must be positive")
        if self.n_topics > self.n_chunks:
            raise ValueError("n_topics cannot exceed n_chunks")
        if self.skew < 0:
            raise ValueError("skew must be >= 0")
        if self.reuse_ratio < 1.0:
            raise ValueError("reuse_ratio must be >= 1")


@dataclass
class SynthStats:
    topic_chunk_counts: list[int] = field(default_factory=list)
    topic_char_mass: list[int] = field(default_factory=list)
    unique_queries: int = 0
    total_queries: int = 0


def _char_sampler(dist: str, rng: np.random.Generator):
    parts = dist.split(":")
    kind = parts[0]
    try:
        if kind == "fixed" and len(parts) == 2:
            n = int(parts[1])
            return lambda: n
        if kind == "uniform" and len(parts) == 3:
            lo, hi = int(parts[1]), int(parts[2])
            return lambda: int(rng.integers(lo, hi + 1))
        if kind == "lognormal" and len(parts) == 3:
            mu, sigma = float(parts[1]), float(parts[2])
            return lambda: max(1, int(rng.lognormal(mu, sigma)))
    except ValueError as exc:
        raise ValueError(f"bad chars_dist {dist!r}: {exc}") from exc
    raise ValueError(
        f"bad chars_dist {dist!r}; expected fixed:N, uniform:LO:HI or lognormal:MU:SIGMA"
    )


def _topic_word(topic: int, j: int) -> str:
    return f"t{topic:03d}w{j:02d}"


def _topic_weights(n_topics: int, skew: float) -> np.ndarray:
    w = (np.arange(1, n_topics + 1, dtype=np.float64)) ** (-skew)
    return w / w.sum()


def generate(spec: SynthSpec) -> tuple[list[CorpusRecord], list[TraceQuery], SynthStats]:
    """Deterministic corpus + trace for a spec; same spec, same bytes."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    weights = _topic_weights(spec.n_topics, spec.skew)
    sample_chars = _char_sampler(spec.chars_dist, rng)

    # Every topic gets at least one chunk; the remainder follows the weights.
    topics = list(range(spec.n_topics))
    extra = rng.choice(spec.n_topics, size=spec.n_chunks - spec.n_topics, p=weights)
    topics.extend(int(t) for t in extra)

    stats = SynthStats(
        topic_chunk_counts=[0] * spec.n_topics,
        topic_char_mass=[0] * spec.n_topics,
        total_queries=spec.n_queries,
    )
    records: list[CorpusRecord] = []
    topic_docs: dict[int, list[str]] = {t: [] for t in range(spec.n_topics)}
    for i, topic in enumerate(topics):
        target = sample_chars()
        words: list[str] = []
        length = 0  # length of " ".join(words)
        while length < target:
            w = _topic_word(topic, int(rng.integers(VOCAB_PER_TOPIC)))
            length += len(w) + (1 if words else 0)
            words.append(w)
        text = " ".join(words)[:target]
        doc_id = f"doc{i:06d}"
        records.append(CorpusRecord(doc_id, text))
        topic_docs[topic].append(doc_id)
        stats.topic_chunk_counts[topic] += 1
        stats.topic_char_mass[topic] += len(text)

    unique = max(1, round(spec.n_queries / spec.reuse_ratio))
    stats.unique_queries = unique
    unique_queries: list[tuple[int, str]] = []
    for _ in range(unique):
        topic = int(rng.choice(spec.n_topics, p=weights))
        words = [_topic_word(topic, int(rng.integers(VOCAB_PER_TOPIC)))
                 for _ in range(spec.query_words)]
        unique_queries.append((topic, " ".join(words)))

    picks = list(range(unique))
    picks.extend(int(i) for i in rng.integers(0, unique, size=spec.n_queries - unique))
    rng.shuffle(picks)

    queries: list[TraceQuery] = []
    for qno, pick in enumerate(picks):
        topic, text = unique_queries[pick]
        relevant = tuple(topic_docs[topic]) if spec.with_relevance else None
        queries.append(TraceQuery(f"q{qno:06d}", text, relevant))
    return records, queries, stats
