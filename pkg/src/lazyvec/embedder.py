"""Deterministic text embedding plus the generation/loading cost estimators.

The embedder is a pluggable boundary: anything that satisfies the
:class:`Embedder` protocol (deterministic text -> vector per instance) can
drive the index. The in-repo implementation hashes whitespace tokens into
sparse signed coordinate patterns, so texts sharing tokens embed nearby,
which is enough structure for clustering and recall experiments.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core import DTYPE, CostModel, DataChunk, SimClock

# Coordinates touched by a single token's vector.
ACTIVE_COORDS = 8

CHUNK_SIZE_DEFAULT = 512
CHUNK_OVERLAP_DEFAULT = 64


@dataclass(frozen=True)
class EmbedderSpec:
    """Identity of a deterministic embedder: same spec + text, same vector."""

    dimension: int
    seed: int
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")


@runtime_checkable
class Embedder(Protocol):
    """Maps text to a fixed-dimension vector, deterministically per instance."""

    @property
    def dimension(self) -> int: ...

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class GenCostEstimate:
    cluster_id: int
    gen_latency: float
    total_chars: int


class DeterministicEmbedder:
    """Hash-token embedder.

    Each whitespace token deterministically selects ACTIVE_COORDS coordinates
    and signs via a PRNG seeded from a keyed hash of the token; a text embeds
    as the sum of its token vectors, L2-normalized when spec.normalize is set.
    Empty text (no tokens) maps to the zero vector and normalization is
    skipped for it.
    """

    def __init__(self, spec: EmbedderSpec) -> None:
        self.spec = spec
        self._salt = (spec.seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
        self._token_cache: dict[str, np.ndarray] = {}

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def embed(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            return np.zeros(self.spec.dimension, dtype=DTYPE)
        cache = self._token_cache
        acc = np.zeros(self.spec.dimension, dtype=np.float64)
        for tok in tokens:
            vec = cache.get(tok)
            if vec is None:
                vec = self._token_vector(tok)
                cache[tok] = vec
            acc += vec
        if self.spec.normalize:
            norm = math.sqrt(float(np.sum(acc * acc)))
            if norm > 0.0:
                acc = acc / norm
        return acc.astype(DTYPE)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        n_active = min(ACTIVE_COORDS, self.spec.dimension)
        coords = rng.choice(self.spec.dimension, size=n_active, replace=False)
        signs = rng.integers(0, 2, size=n_active).astype(np.float64) * 2.0 - 1.0
        vec = np.zeros(self.spec.dimension, dtype=np.float64)
        vec[coords] = signs
        return vec


def estimate_gen_latency(
    chunks: Sequence[DataChunk], cost_model: CostModel, cluster_id: int = -1
) -> GenCostEstimate:
    """Generation latency of a member list: total characters / gen_rate.

    Pure profiling from character counts; never times real embedding calls,
    so the estimate equals the charge embed_cluster applies, exactly.
    """
    total = sum(c.char_len for c in chunks)
    return GenCostEstimate(cluster_id, total / cost_model.gen_rate, total)


def embed_cluster(
    embedder: Embedder,
    chunks: Sequence[DataChunk],
    cost_model: CostModel,
    clock: SimClock,
) -> tuple[list[np.ndarray], float]:
    """Embed every chunk of one cluster, charging generation cost to the clock.

    Returns the embeddings in chunk order and the seconds charged, which is
    bitwise-identical to estimate_gen_latency for the same member list.
    """
    if not chunks:
        raise ValueError("embed_cluster requires a non-empty chunk list")
    embeddings = [embedder.embed(c.text) for c in chunks]
    cost = sum(c.char_len for c in chunks) / cost_model.gen_rate
    clock.charge(cost)
    return embeddings, cost


def estimate_load_latency(n_embeddings: int, cost_model: CostModel) -> float:
    """Storage read latency for n embeddings: n * byte size / load_rate."""
    if n_embeddings < 0:
        raise ValueError("n_embeddings must be >= 0")
    return (n_embeddings * cost_model.embedding_byte_size) / cost_model.load_rate


def chunk_text(
    text: str,
    size: int = CHUNK_SIZE_DEFAULT,
    overlap: int = CHUNK_OVERLAP_DEFAULT,
) -> list[str]:
    """Split text into fixed-size overlapping character windows.

    Windows start every (size - overlap) characters; the last window may be
    shorter but always extends past the previous one. Empty text yields one
    empty chunk so every document stays addressable.
    """
    if size < 1:
        raise ValueError("chunk size must be >= 1")
    if overlap < 0 or overlap >= size:
        raise ValueError("chunk overlap must satisfy 0 <= overlap < size")
    if text == "":
        return [""]
    stride = size - overlap
    pieces: list[str] = []
    start = 0
    while True:
        pieces.append(text[start : start + size])
        if start + size >= len(text):
            break
        start += stride
    return pieces
