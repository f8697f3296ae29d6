"""Engine configuration: defaults, TOML loading, flag overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cache import ALPHA_DEFAULT, DECAY_FACTOR_DEFAULT, THRESHOLD_PSEUDOCODE
from .core import GEN_RATE_DEFAULT, SLO_DEFAULT, CostModel
from .embedder import CHUNK_OVERLAP_DEFAULT, CHUNK_SIZE_DEFAULT, EmbedderSpec
from .index import KMEANS_ITERS_DEFAULT

DIMENSION_DEFAULT = 96
EMBED_SEED_DEFAULT = 42
INDEX_SEED_DEFAULT = 7
MEMORY_BUDGET_DEFAULT = 8 * 1024**3
CACHE_FRACTION_DEFAULT = 0.07


@dataclass(frozen=True)
class EngineConfig:
    """Every knob the engine, cache and cost model expose.

    ``load_rate=None`` derives the rate from the generate/load crossover
    calibration; ``cache_capacity_bytes=None`` uses ``cache_fraction`` of the
    memory budget; ``threshold_step=None`` uses slo / 100.
    """

    dimension: int = DIMENSION_DEFAULT
    embed_seed: int = EMBED_SEED_DEFAULT
    normalize: bool = True
    chunk_size: int = CHUNK_SIZE_DEFAULT
    chunk_overlap: int = CHUNK_OVERLAP_DEFAULT
    gen_rate: float = GEN_RATE_DEFAULT
    load_rate: float | None = None
    slo: float = SLO_DEFAULT
    n_clusters: int | None = None
    kmeans_iters: int = KMEANS_ITERS_DEFAULT
    seed: int = INDEX_SEED_DEFAULT
    memory_budget_bytes: int = MEMORY_BUDGET_DEFAULT
    cache_fraction: float = CACHE_FRACTION_DEFAULT
    cache_capacity_bytes: int | None = None
    decay_factor: float = DECAY_FACTOR_DEFAULT
    alpha: float = ALPHA_DEFAULT
    threshold_step: float | None = None
    threshold_variant: str = THRESHOLD_PSEUDOCODE
    split_factor: float = 4.0
    merge_factor: float = 0.125
    search_cost_per_distance: float = 0.0

    def embedder_spec(self) -> EmbedderSpec:
        return EmbedderSpec(dimension=self.dimension, seed=self.embed_seed, normalize=self.normalize)

    def cost_model(self) -> CostModel:
        return CostModel.default(
            self.dimension, gen_rate=self.gen_rate, slo=self.slo, load_rate=self.load_rate
        )

    def capacity_bytes(self) -> int:
        if self.cache_capacity_bytes is not None:
            return self.cache_capacity_bytes
        return int(self.cache_fraction * self.memory_budget_bytes)

    def step(self) -> float:
        return self.threshold_step if self.threshold_step is not None else self.slo / 100.0

    def with_overrides(self, **overrides: object) -> "EngineConfig":
        """Apply non-None overrides by field name; unknown names raise."""
        known = {f.name for f in fields(self)}
        cleaned = {}
        for key, value in overrides.items():
            if key not in known:
                raise ValueError(f"unknown config field: {key}")
            if value is not None:
                cleaned[key] = value
        return replace(self, **cleaned)


# TOML section/key -> EngineConfig field.
_TOML_KEYS = {
    ("embedder", "dimension"): "dimension",
    ("embedder", "seed"): "embed_seed",
    ("embedder", "normalize"): "normalize",
    ("chunking", "size"): "chunk_size",
    ("chunking", "overlap"): "chunk_overlap",
    ("cost", "gen_rate"): "gen_rate",
    ("cost", "load_rate"): "load_rate",
    ("cost", "slo"): "slo",
    ("index", "n_clusters"): "n_clusters",
    ("index", "kmeans_iters"): "kmeans_iters",
    ("index", "seed"): "seed",
    ("cache", "memory_budget_bytes"): "memory_budget_bytes",
    ("cache", "fraction"): "cache_fraction",
    ("cache", "capacity_bytes"): "cache_capacity_bytes",
    ("cache", "decay_factor"): "decay_factor",
    ("cache", "alpha"): "alpha",
    ("cache", "threshold_step"): "threshold_step",
    ("cache", "threshold_variant"): "threshold_variant",
    ("engine", "split_factor"): "split_factor",
    ("engine", "merge_factor"): "merge_factor",
    ("engine", "search_cost_per_distance"): "search_cost_per_distance",
}


def config_from_toml(path: Path | str, base: EngineConfig | None = None) -> EngineConfig:
    """Load a config file; unknown sections or keys are rejected loudly."""
    base = base if base is not None else EngineConfig()
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    overrides: dict[str, object] = {}
    for section, table in doc.items():
        if not isinstance(table, dict):
            raise ValueError(f"{path}: top-level key {section!r} must be a section")
        for key, value in table.items():
            field_name = _TOML_KEYS.get((section, key))
            if field_name is None:
                raise ValueError(f"{path}: unknown config key [{section}] {key}")
            overrides[field_name] = value
    return base.with_overrides(**overrides)
