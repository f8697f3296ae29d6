"""Shared test helpers plus the acceptance-criterion reporting hook."""

from __future__ import annotations

import random

import numpy as np
import pytest

from lazyvec.core import DataChunk
from lazyvec.embedder import DeterministicEmbedder, EmbedderSpec

DIM = 96


def make_embedder(dim: int = DIM, seed: int = 42, normalize: bool = True) -> DeterministicEmbedder:
    return DeterministicEmbedder(EmbedderSpec(dimension=dim, seed=seed, normalize=normalize))


def random_text(rng: random.Random, n_words: int, vocab: int = 400) -> str:
    return " ".join(f"w{rng.randrange(vocab):04d}" for _ in range(n_words))


def random_chunks(rng: random.Random, n: int, words_lo: int = 5, words_hi: int = 60,
                  start_id: int = 0) -> list[DataChunk]:
    return [
        DataChunk.from_text(start_id + i, random_text(rng, rng.randint(words_lo, words_hi)))
        for i in range(n)
    ]


def random_vectors(rng: np.random.Generator, n: int, dim: int = DIM) -> np.ndarray:
    return rng.standard_normal((n, dim)).astype(np.float32)


_ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, description: str, passed: bool) -> None:
    _ACCEPTANCE_RESULTS[number] = (description, "PASS" if passed else "FAIL")


class criterion:
    """Context manager: records one acceptance criterion's pass/fail line."""

    def __init__(self, number: int, description: str) -> None:
        self.number = number
        self.description = description

    def __enter__(self) -> "criterion":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        record_criterion(self.number, self.description, exc_type is None)
        return False


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        description, verdict = _ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {description}")
