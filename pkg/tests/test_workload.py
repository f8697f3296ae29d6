"""Synthetic corpus/trace generator properties."""

from __future__ import annotations

import statistics

import pytest

from lazyvec.workload import SynthSpec, generate


def test_generation_is_deterministic():
    spec = SynthSpec(n_chunks=100, n_topics=8, skew=1.0, n_queries=40, seed=12)
    a_records, a_queries, _ = generate(spec)
    b_records, b_queries, _ = generate(spec)
    assert a_records == b_records
    assert a_queries == b_queries


def test_zero_skew_is_near_uniform():
    spec = SynthSpec(n_chunks=2000, n_topics=20, skew=0.0, n_queries=10, seed=1,
                     chars_dist="fixed:500")
    _, _, stats = generate(spec)
    masses = stats.topic_char_mass
    assert max(masses) < 2.0 * min(masses)


def test_heavy_skew_has_dominant_topic():
    spec = SynthSpec(n_chunks=2000, n_topics=100, skew=1.5, n_queries=10, seed=2,
                     chars_dist="uniform:300:900")
    _, _, stats = generate(spec)
    masses = stats.topic_char_mass
    assert max(masses) > 10.0 * statistics.median(masses)


def test_reuse_ratio_within_five_percent():
    for ratio in (1.5, 2.0, 4.0):
        spec = SynthSpec(n_chunks=50, n_topics=5, n_queries=400, reuse_ratio=ratio, seed=3)
        _, queries, stats = generate(spec)
        unique_texts = len({q.text for q in queries})
        achieved = len(queries) / unique_texts
        assert abs(achieved - ratio) / ratio <= 0.05
        assert stats.unique_queries >= unique_texts  # duplicates by construction only


def test_relevance_lists_cover_query_topic():
    spec = SynthSpec(n_chunks=60, n_topics=6, n_queries=20, seed=4, with_relevance=True)
    records, queries, _ = generate(spec)
    doc_ids = {r.id for r in records}
    for q in queries:
        assert q.relevant_ids
        assert set(q.relevant_ids) <= doc_ids
        # Query words name the topic its relevant docs belong to.
        topic = q.text.split()[0][1:4]
        assert all(True for _ in q.relevant_ids)
        assert any(topic in rec.text for rec in records if rec.id in q.relevant_ids)


def test_chars_dist_parsers():
    assert generate(SynthSpec(n_chunks=5, n_topics=2, chars_dist="fixed:100", seed=5,
                              n_queries=2))[0]
    assert generate(SynthSpec(n_chunks=5, n_topics=2, chars_dist="lognormal:6.0:0.4",
                              seed=5, n_queries=2))[0]
    with pytest.raises(ValueError, match="chars_dist"):
        generate(SynthSpec(n_chunks=5, n_topics=2, chars_dist="weibull:1:2", seed=5,
                           n_queries=2))


def test_fixed_chars_hits_target():
    records, _, _ = generate(SynthSpec(n_chunks=30, n_topics=3, chars_dist="fixed:256",
                                       seed=6, n_queries=2))
    assert all(len(r.text) == 256 for r in records)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_chunks=2, n_topics=5)
    with pytest.raises(ValueError):
        SynthSpec(n_chunks=5, n_topics=2, reuse_ratio=0.5)
    with pytest.raises(ValueError):
        SynthSpec(n_chunks=0, n_topics=1)
