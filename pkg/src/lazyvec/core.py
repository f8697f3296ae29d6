"""Shared domain types: chunks, cost model, simulated clock, and distances.

Everything time-related in the engine runs off :class:`SimClock`; no module in
the retrieval path reads the wall clock. Embeddings are float32 vectors and
all distance arithmetic happens in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DTYPE = np.float32
BYTES_PER_COMPONENT = 4

# Default cost calibration. Generating the embeddings of a cluster holding
# CROSSOVER_CHARS characters costs exactly as much as loading that cluster's
# CROSSOVER_EMBEDDINGS vectors back from storage (47 = ceil(24000 / 512) for
# the default 512-character chunk windows).
GEN_RATE_DEFAULT = 8000.0
CROSSOVER_CHARS = 24000
CROSSOVER_EMBEDDINGS = 47
SLO_DEFAULT = 1.0


@dataclass(frozen=True)
class DataChunk:
    """A text fragment with a stable id; char_len drives generation cost."""

    id: int
    text: str
    char_len: int

    def __post_init__(self) -> None:
        if self.char_len != len(self.text):
            raise ValueError(
                f"chunk {self.id}: char_len {self.char_len} != len(text) {len(self.text)}"
            )

    @classmethod
    def from_text(cls, chunk_id: int, text: str) -> "DataChunk":
        return cls(chunk_id, text, len(text))


@dataclass(frozen=True)
class CostModel:
    """Simulated throughput rates and the latency objective.

    gen_rate is embedding-generation throughput in characters per second,
    load_rate is storage read throughput in bytes per second, slo is the
    retrieval latency objective in seconds.
    """

    gen_rate: float
    load_rate: float
    slo: float
    embedding_byte_size: int

    def __post_init__(self) -> None:
        if self.gen_rate <= 0 or self.load_rate <= 0 or self.slo <= 0:
            raise ValueError("gen_rate, load_rate and slo must all be positive")
        if self.embedding_byte_size <= 0:
            raise ValueError("embedding_byte_size must be positive")

    @classmethod
    def default(
        cls,
        dimension: int,
        gen_rate: float = GEN_RATE_DEFAULT,
        slo: float = SLO_DEFAULT,
        load_rate: float | None = None,
    ) -> "CostModel":
        """Cost model whose generate/load crossover sits at CROSSOVER_CHARS.

        When load_rate is not given it is derived so that a cluster of
        CROSSOVER_CHARS characters (CROSSOVER_EMBEDDINGS vectors under the
        default chunking) generates and loads in identical time.
        """
        byte_size = BYTES_PER_COMPONENT * dimension
        if load_rate is None:
            load_rate = CROSSOVER_EMBEDDINGS * byte_size * gen_rate / CROSSOVER_CHARS
        return cls(gen_rate, load_rate, slo, byte_size)


class SimClock:
    """Single simulated time source; advances only through charge()."""

    __slots__ = ("now",)

    def __init__(self, now: float = 0.0) -> None:
        self.now = float(now)

    def charge(self, cost: float) -> float:
        """Advance the clock by cost seconds and return the new time."""
        if cost < 0:
            raise ValueError(f"cannot charge a negative cost: {cost}")
        self.now += cost
        return self.now


class SearchHit(NamedTuple):
    chunk_id: int
    distance: float


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two equal-length vectors.

    Components are widened to float64 and the squared differences are summed
    with exact rounding (math.fsum), so the result is the correctly rounded
    sum of the per-component squares.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    av = a.astype(np.float64, copy=False).tolist()
    bv = b.astype(np.float64, copy=False).tolist()
    return math.fsum((x - y) * (x - y) for x, y in zip(av, bv))


def sq_distances(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared L2 from query to every row of matrix, rowwise in float64.

    Each row is reduced independently, so the value computed for a row does
    not depend on which other rows are present. All search paths share this
    routine, which is what makes hit lists comparable across modes.
    """
    m = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if m.ndim != 2 or q.ndim != 1 or m.shape[1] != q.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} vs {q.shape}")
    d = m - q
    return (d * d).sum(axis=1)


def top_k_hits(ids: np.ndarray, dists: np.ndarray, k: int) -> list[SearchHit]:
    """The k nearest (id, distance) pairs, sorted by distance then id."""
    order = np.lexsort((ids, dists))
    return [SearchHit(int(ids[i]), float(dists[i])) for i in order[:k]]


def validate_embedding(vec: np.ndarray, dimension: int) -> np.ndarray:
    """Check shape and finiteness; returns the vector as float32."""
    v = np.asarray(vec, dtype=DTYPE)
    if v.ndim != 1 or v.shape[0] != dimension:
        raise ValueError(f"expected a vector of dimension {dimension}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite components")
    return v
