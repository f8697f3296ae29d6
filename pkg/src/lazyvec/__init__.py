"""lazyvec: memory-budgeted two-level vector retrieval.

Second-level embeddings are pruned at index time and regenerated on demand;
clusters too expensive to regenerate within the SLO are persisted to disk,
and everything else flows through a cost-aware adaptive cache. A simulated
cost clock makes every latency claim deterministic and testable.
"""

__version__ = "0.1.0"

from .core import CostModel, DataChunk, SearchHit, SimClock, distance
from .embedder import DeterministicEmbedder, EmbedderSpec, chunk_text
from .engine import Engine, RetrievalConfig, RetrievalMode
from .index import FlatIndex, IvfIndex, flat_build, flat_search, ivf_build, kmeans

__all__ = [
    "CostModel",
    "DataChunk",
    "DeterministicEmbedder",
    "EmbedderSpec",
    "Engine",
    "FlatIndex",
    "IvfIndex",
    "RetrievalConfig",
    "RetrievalMode",
    "SearchHit",
    "SimClock",
    "chunk_text",
    "distance",
    "flat_build",
    "flat_search",
    "ivf_build",
    "kmeans",
    "__version__",
]
