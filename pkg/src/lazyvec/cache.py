"""Capacity-bounded cache of generated cluster embeddings.

Eviction is cost-aware weighted LFU: the victim is always the resident
minimizing ``counter * gen_latency``, so entries that are cheap to regenerate
go first. Admission is gated by an adaptive minimum-latency threshold that
starts at zero (cache everything) and drifts up or down with the observed
hit/miss and latency pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .index import ClusterVectors

ENTRY_OVERHEAD_BYTES = 64

DECAY_FACTOR_DEFAULT = 0.95
ALPHA_DEFAULT = 0.1

THRESHOLD_PSEUDOCODE = "pseudocode"
THRESHOLD_PROSE = "prose"


@dataclass(frozen=True)
class MinLatencyThreshold:
    """Adaptive admission bar for caching generated embeddings.

    ``value`` is the minimum generation latency an entry must have to be
    cached. On a miss round the bar is raised by ``step`` when the round's
    latency compares against the moving average in the configured direction;
    on a hit round it is lowered by ``step``, clamped at zero. The moving
    average itself is updated every round by exponential smoothing.

    The default variant raises when the moving average is below the last
    latency; the "prose" variant raises on the opposite comparison and exists
    for experimentation.
    """

    value: float = 0.0
    mov_avg_latency: float = 0.0
    alpha: float = ALPHA_DEFAULT
    step: float = 0.01
    variant: str = THRESHOLD_PSEUDOCODE

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if self.variant not in (THRESHOLD_PSEUDOCODE, THRESHOLD_PROSE):
            raise ValueError(f"unknown threshold variant: {self.variant!r}")


def threshold_update(
    th: MinLatencyThreshold, was_miss: bool, last_latency: float
) -> MinLatencyThreshold:
    """One adjustment round; returns the new threshold state."""
    if last_latency < 0:
        raise ValueError("last_latency must be >= 0")
    value = th.value
    if was_miss:
        if th.variant == THRESHOLD_PSEUDOCODE:
            raise_bar = th.mov_avg_latency < last_latency
        else:
            raise_bar = last_latency < th.mov_avg_latency
        if raise_bar:
            value = value + th.step
    else:
        value = max(0.0, value - th.step)
    mov_avg = (1.0 - th.alpha) * th.mov_avg_latency + th.alpha * last_latency
    return replace(th, value=value, mov_avg_latency=mov_avg)


def admits(th: MinLatencyThreshold, gen_latency: float) -> bool:
    """True iff an entry with this generation latency may be cached."""
    return gen_latency >= th.value


@dataclass
class CacheEntry:
    cluster_id: int
    vectors: ClusterVectors
    counter: float
    gen_latency: float
    nbytes: int

    @property
    def weight(self) -> float:
        return self.counter * self.gen_latency


@dataclass(frozen=True)
class CacheStats:
    hits: int
    misses: int
    evictions: int
    admissions_rejected: int
    threshold_value: float
    entry_count: int
    current_bytes: int
    capacity_bytes: int


def entry_nbytes(vectors: ClusterVectors) -> int:
    return int(vectors.vectors.nbytes) + ENTRY_OVERHEAD_BYTES


class EmbeddingCache:
    """Single-owner mutable cache; all access is serialized by the engine."""

    def __init__(
        self,
        capacity_bytes: int,
        decay_factor: float = DECAY_FACTOR_DEFAULT,
        threshold: MinLatencyThreshold | None = None,
    ) -> None:
        if capacity_bytes < 0:
            raise ValueError("capacity_bytes must be >= 0")
        if not 0.0 < decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        self.capacity_bytes = int(capacity_bytes)
        self.decay_factor = float(decay_factor)
        self.threshold = threshold if threshold is not None else MinLatencyThreshold()
        self.entries: dict[int, CacheEntry] = {}
        self.current_bytes = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.admissions_rejected = 0

    def lookup(self, cluster_id: int) -> CacheEntry | None:
        """On a hit the entry's counter is bumped before any decay round."""
        entry = self.entries.get(cluster_id)
        if entry is None:
            self.misses += 1
            return None
        entry.counter += 1.0
        self.hits += 1
        return entry

    def insert(
        self, cluster_id: int, vectors: ClusterVectors, gen_latency: float
    ) -> list[int] | None:
        """Insert a freshly generated cluster; returns ids evicted to fit.

        Returns None when the entry alone exceeds total capacity (the
        "uncacheable" outcome; the cache is left untouched and the caller
        simply proceeds uncached). Before inserting, residents whose
        generation latency has fallen below the admission threshold are swept
        out; afterwards the weighted-LFU loop evicts until the byte budget
        holds again.
        """
        if cluster_id in self.entries:
            raise ValueError(f"cluster {cluster_id} already cached")
        if gen_latency <= 0:
            raise ValueError("cached entries must have positive gen_latency")
        size = entry_nbytes(vectors)
        if size > self.capacity_bytes:
            self.admissions_rejected += 1
            return None

        evicted: list[int] = []
        for cid in sorted(self.entries):
            if self.entries[cid].gen_latency < self.threshold.value:
                self._evict(cid)
                evicted.append(cid)

        self.entries[cluster_id] = CacheEntry(cluster_id, vectors, 1.0, gen_latency, size)
        self.current_bytes += size
        while self.current_bytes > self.capacity_bytes:
            victim = min(self.entries.values(), key=lambda e: (e.weight, e.cluster_id))
            self._evict(victim.cluster_id)
            evicted.append(victim.cluster_id)
        return evicted

    def decay_counters(self) -> None:
        """Multiply every resident counter by the decay factor.

        The engine calls this once at the end of each cache access round,
        after the lookup or the lookup-plus-insert.
        """
        for entry in self.entries.values():
            entry.counter *= self.decay_factor

    def reject_admission(self) -> None:
        self.admissions_rejected += 1

    def invalidate(self, cluster_id: int) -> bool:
        """Drop an entry because its cluster mutated; not counted as eviction."""
        entry = self.entries.pop(cluster_id, None)
        if entry is None:
            return False
        self.current_bytes -= entry.nbytes
        return True

    def update_threshold(self, was_miss: bool, last_latency: float) -> None:
        self.threshold = threshold_update(self.threshold, was_miss, last_latency)

    def _evict(self, cluster_id: int) -> None:
        entry = self.entries.pop(cluster_id)
        self.current_bytes -= entry.nbytes
        self.evictions += 1

    def __contains__(self, cluster_id: int) -> bool:
        return cluster_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def stats(self) -> CacheStats:
        return CacheStats(
            hits=self.hits,
            misses=self.misses,
            evictions=self.evictions,
            admissions_rejected=self.admissions_rejected,
            threshold_value=self.threshold.value,
            entry_count=len(self.entries),
            current_bytes=self.current_bytes,
            capacity_bytes=self.capacity_bytes,
        )
