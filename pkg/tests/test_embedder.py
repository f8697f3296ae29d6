"""Deterministic embedder, chunking and the cost estimators."""

from __future__ import annotations

import random

import numpy as np
import pytest

from conftest import make_embedder
from lazyvec.core import CostModel, DataChunk, SimClock
from lazyvec.embedder import (
    EmbedderSpec,
    chunk_text,
    embed_cluster,
    estimate_gen_latency,
    estimate_load_latency,
)


def make_chunks(lengths: list[int], start_id: int = 0) -> list[DataChunk]:
    return [DataChunk.from_text(start_id + i, "x" * n) for i, n in enumerate(lengths)]


def test_empty_text_is_zero_vector():
    emb = make_embedder()
    v = emb.embed("")
    assert v.shape == (96,)
    assert not v.any()


def test_embed_deterministic():
    emb = make_embedder()
    a = emb.embed("the quick brown fox")
    b = emb.embed("the quick brown fox")
    assert np.array_equal(a, b)
    # A second instance with the same spec agrees bitwise too.
    c = make_embedder().embed("the quick brown fox")
    assert np.array_equal(a, c)


def test_embed_depends_on_seed():
    a = make_embedder(seed=1).embed("hello")
    b = make_embedder(seed=2).embed("hello")
    assert not np.array_equal(a, b)


def test_collision_scan_100_random_strings():
    rng = random.Random(41)
    emb = make_embedder()
    texts = set()
    while len(texts) < 100:
        texts.add(" ".join(f"tok{rng.randrange(10_000)}" for _ in range(rng.randint(1, 8))))
    vectors = [emb.embed(t).tobytes() for t in sorted(texts)]
    assert len(set(vectors)) == len(vectors)


def test_determinism_property_1000_strings():
    rng = random.Random(1001)
    emb_a = make_embedder()
    emb_b = make_embedder()
    for _ in range(1000):
        text = " ".join(f"v{rng.randrange(50_000)}" for _ in range(rng.randint(0, 6)))
        first = emb_a.embed(text)
        assert np.array_equal(first, emb_a.embed(text))
        assert np.array_equal(first, emb_b.embed(text))


def test_normalized_output_has_unit_norm():
    emb = make_embedder()
    v = emb.embed("alpha beta gamma").astype(np.float64)
    assert abs(float(np.sqrt((v * v).sum())) - 1.0) < 1e-6


def test_unnormalized_spec_keeps_token_sums():
    emb = make_embedder(normalize=False)
    one = emb.embed("alpha")
    two = emb.embed("alpha alpha")
    assert np.allclose(two, 2.0 * one)


def test_shared_tokens_embed_nearby():
    emb = make_embedder()
    a = emb.embed("alpha beta gamma delta")
    b = emb.embed("alpha beta gamma epsilon")
    c = emb.embed("zeta eta theta iota")
    from lazyvec.core import distance

    assert distance(a, b) < distance(a, c)


def test_embed_cluster_direct_ratio():
    cm = CostModel(gen_rate=10_000.0, load_rate=1.0, slo=1.0, embedding_byte_size=4)
    clock = SimClock()
    vecs, cost = embed_cluster(make_embedder(), make_chunks([1000]), cm, clock)
    assert cost == 0.1
    assert clock.now == 0.1
    assert len(vecs) == 1


def test_embed_cluster_sum_formula():
    cm = CostModel(gen_rate=8000.0, load_rate=1.0, slo=1.0, embedding_byte_size=4)
    k, length = 7, 320
    chunks = make_chunks([length] * k)
    _, cost = embed_cluster(make_embedder(), chunks, cm, SimClock())
    assert cost == (k * length) / 8000.0


def test_embed_cluster_empty_rejected():
    cm = CostModel.default(96)
    with pytest.raises(ValueError):
        embed_cluster(make_embedder(), [], cm, SimClock())


def test_estimate_gen_latency_trivials():
    cm = CostModel(gen_rate=5000.0, load_rate=1.0, slo=1.0, embedding_byte_size=4)
    assert estimate_gen_latency([], cm).gen_latency == 0.0
    est = estimate_gen_latency(make_chunks([5000]), cm, cluster_id=3)
    assert est.gen_latency == 1.0
    assert est.total_chars == 5000
    assert est.cluster_id == 3


def test_estimator_equals_charge():
    rng = random.Random(12)
    cm = CostModel.default(96)
    emb = make_embedder()
    for _ in range(20):
        chunks = make_chunks([rng.randint(1, 3000) for _ in range(rng.randint(1, 12))])
        est = estimate_gen_latency(chunks, cm)
        _, cost = embed_cluster(emb, chunks, cm, SimClock())
        assert cost == est.gen_latency


def test_estimate_load_latency():
    cm = CostModel(gen_rate=1.0, load_rate=3072.0, slo=1.0, embedding_byte_size=3072)
    assert estimate_load_latency(0, cm) == 0.0
    assert estimate_load_latency(1, cm) == 1.0
    rng = random.Random(8)
    for _ in range(20):
        n = rng.randint(0, 500)
        assert estimate_load_latency(n, cm) == (n * 3072) / 3072.0


def test_crossover_calibration():
    """Default rates put the generate/load break-even at 24000 characters."""
    cm = CostModel.default(96)
    emb = make_embedder()

    def cluster_of(total_chars: int, n_chunks: int) -> list[DataChunk]:
        base = total_chars // n_chunks
        lengths = [base] * n_chunks
        lengths[-1] += total_chars - base * n_chunks
        return make_chunks(lengths)

    load_47 = estimate_load_latency(47, cm)
    _, gen_eq = embed_cluster(emb, cluster_of(24_000, 47), cm, SimClock())
    assert gen_eq == load_47
    _, gen_lo = embed_cluster(emb, cluster_of(23_999, 47), cm, SimClock())
    assert gen_lo < load_47
    _, gen_hi = embed_cluster(emb, cluster_of(24_001, 47), cm, SimClock())
    assert gen_hi > load_47


def test_crossover_scales_with_mass():
    """Clusters chunked at the calibration ratio keep the crossover sign."""
    cm = CostModel.default(96)
    for mass, n in [(12_000, 24), (6_000, 12), (48_000, 93), (24_064, 47)]:
        gen = estimate_gen_latency(make_chunks([mass // n] * n), cm).gen_latency
        load = estimate_load_latency(n, cm)
        # mass/n < 24000/47 chars per chunk means generation wins.
        if mass / n < 24_000 / 47:
            assert gen < load
        else:
            assert gen > load


def test_chunk_text_windows():
    text = "a" * 1000
    pieces = chunk_text(text, size=512, overlap=64)
    assert [len(p) for p in pieces] == [512, 512, 104]
    assert pieces[0] == text[0:512]
    assert pieces[1] == text[448:960]
    assert pieces[2] == text[896:1000]


def test_chunk_text_short_and_exact():
    assert chunk_text("abc", size=512, overlap=64) == ["abc"]
    assert [len(p) for p in chunk_text("b" * 960, size=512, overlap=64)] == [512, 512]


def test_chunk_text_empty_yields_one_empty_chunk():
    assert chunk_text("", size=512, overlap=64) == [""]


def test_chunk_text_bad_params():
    with pytest.raises(ValueError):
        chunk_text("abc", size=0)
    with pytest.raises(ValueError):
        chunk_text("abc", size=10, overlap=10)


def test_chunk_text_covers_document():
    rng = random.Random(77)
    for _ in range(10):
        text = "".join(rng.choice("abcdef ") for _ in range(rng.randint(1, 4000)))
        pieces = chunk_text(text, size=256, overlap=32)
        rebuilt = pieces[0] + "".join(p[32:] for p in pieces[1:])
        assert rebuilt == text


def test_spec_validation():
    with pytest.raises(ValueError):
        EmbedderSpec(dimension=0, seed=1)
