"""Content-addressed cache: durability, corruption handling, replay."""

from __future__ import annotations

import pytest

from ddselect.cache import CachingBackend, ScoreCache, request_key
from ddselect.protocol.mock import MockBackend, MockConfig
from ddselect.protocol.types import GenParams


@pytest.fixture
def cache(tmp_path) -> ScoreCache:
    return ScoreCache(tmp_path / "cache")


def make_backend() -> MockBackend:
    return MockBackend(
        MockConfig(
            probabilities={"a": 0.5, "b": 0.5},
            generations={"a b": "b a"},
            attention_mode="hash",
            embedding_dim=4,
        )
    )


class TestScoreCache:
    def test_put_then_get(self, cache):
        key = request_key("m", "score", {"x": 1})
        cache.put(key, b"payload bytes")
        assert cache.get(key) == b"payload bytes"
        assert cache.hits == 1

    def test_unknown_key_is_miss(self, cache):
        assert cache.get("ab" * 32) is None
        assert cache.misses == 1

    def test_durable_across_instances(self, tmp_path):
        first = ScoreCache(tmp_path / "c")
        key = request_key("m", "op", {"v": 2})
        first.put(key, b"\x00\x01data")
        second = ScoreCache(tmp_path / "c")
        assert second.get(key) == b"\x00\x01data"

    def test_flipped_byte_reads_as_miss_and_counts(self, cache):
        key = request_key("m", "op", {"v": 3})
        cache.put(key, b"sensitive payload")
        path = cache._path(key)
        blob = bytearray(path.read_bytes())
        blob[-3] ^= 0xFF
        path.write_bytes(bytes(blob))
        assert cache.get(key) is None
        assert cache.corrupt_entries == 1
        # Overwriting repairs the entry.
        cache.put(key, b"sensitive payload")
        assert cache.get(key) == b"sensitive payload"

    def test_truncated_header_is_miss(self, cache):
        key = request_key("m", "op", {"v": 4})
        cache.put(key, b"x")
        cache._path(key).write_bytes(b"garbage-without-newline")
        assert cache.get(key) is None
        assert cache.corrupt_entries == 1

    def test_keys_differ_per_component(self):
        base = request_key("m", "score", {"context": "c", "target": "t"})
        assert request_key("m2", "score", {"context": "c", "target": "t"}) != base
        assert request_key("m", "generate", {"context": "c", "target": "t"}) != base
        assert request_key("m", "score", {"context": "c", "target": "u"}) != base
        assert len(base) == 64


class TestCachingBackend:
    def test_replay_identical_and_zero_backend_calls(self, tmp_path):
        backend = make_backend()
        caching = CachingBackend(backend, ScoreCache(tmp_path / "c"))
        rec = caching.score_target("ctx", "a b a", want_attention=True)
        text = caching.generate("a b", GenParams(max_new_tokens=8))
        vec = caching.embed("a b")
        calls_after_cold = backend.total_calls()
        assert calls_after_cold > 0

        warm_backend = make_backend()
        warm = CachingBackend(warm_backend, ScoreCache(tmp_path / "c"))
        assert warm.score_target("ctx", "a b a", want_attention=True) == rec
        assert warm.generate("a b", GenParams(max_new_tokens=8)) == text
        assert warm.embed("a b") == vec
        assert warm.model_info() == backend.model_info()
        assert warm_backend.total_calls() == 0

    def test_want_attention_is_part_of_the_key(self, tmp_path):
        backend = make_backend()
        caching = CachingBackend(backend, ScoreCache(tmp_path / "c"))
        plain = caching.score_target("", "a b")
        with_attention = caching.score_target("", "a b", want_attention=True)
        assert plain.attention is None
        assert with_attention.attention is not None

    def test_gen_params_change_misses(self, tmp_path):
        backend = make_backend()
        caching = CachingBackend(backend, ScoreCache(tmp_path / "c"))
        caching.generate("a b", GenParams(max_new_tokens=8))
        first_calls = backend.counters["generate"]
        caching.generate("a b", GenParams(max_new_tokens=1))
        assert backend.counters["generate"] == first_calls + 1

    def test_corrupt_entry_refetched_and_overwritten(self, tmp_path):
        backend = make_backend()
        cache = ScoreCache(tmp_path / "c")
        caching = CachingBackend(backend, cache)
        caching.embed("a")
        key = request_key(backend.model_info().model_id, "embed", {"text": "a"})
        path = cache._path(key)
        blob = bytearray(path.read_bytes())
        blob[-2] ^= 0x01
        path.write_bytes(bytes(blob))
        before = backend.counters["embed"]
        value = caching.embed("a")
        assert backend.counters["embed"] == before + 1
        assert cache.corrupt_entries == 1
        assert caching.embed("a") == value  # repaired entry now hits
        assert backend.counters["embed"] == before + 1
