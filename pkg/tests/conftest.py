"""Shared fixtures for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from world import EMBEDDING_DIM, build_world  # noqa: E402

from ddselect.config import PipelineConfig  # noqa: E402
from ddselect.protocol.mock import MockBackend, MockConfig  # noqa: E402


@pytest.fixture
def unigram_backend() -> MockBackend:
    """P(a)=0.8, P(b)=0.2; canned generations for the difficulty examples."""
    return MockBackend(
        MockConfig(
            probabilities={"a": 0.8, "b": 0.2},
            generations={"a b a": "a a", "p": "r"},
            default_generation="a",
            attention_mode="uniform",
            embedding_dim=4,
        )
    )


@pytest.fixture
def small_world():
    return build_world(20, seed=7)


def make_config(tmp_path: Path, corpus_path: Path, **kwargs) -> PipelineConfig:
    defaults = dict(
        corpus_path=str(corpus_path),
        backend_url="mock://unused",
        output_dir=str(tmp_path / "out"),
        cache_dir=str(tmp_path / "cache"),
        delta=90,
        band_low=10.0,
        band_high=60.0,
        k=20,
        aggregation="mean",
        concurrency=2,
    )
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


@pytest.fixture
def world_config(tmp_path, small_world):
    corpus = small_world.write_corpus(tmp_path / "corpus.jsonl")
    return make_config(tmp_path, corpus), small_world


__all__ = ["EMBEDDING_DIM", "build_world", "make_config"]
