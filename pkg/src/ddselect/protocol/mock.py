"""Deterministic mock scorer backend.

Whitespace tokens are scored from a fixed unigram probability table,
generations come from a canned prompt->text map, attention blocks are
canned, uniform, or hash-derived, and embeddings are hash-derived.  Every
endpoint keeps a call counter so cache-idempotence tests can assert that a
warm pipeline run never touches the backend.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.errors import ContextWindowError, EmptyTargetError, MockConfigError, ProtocolError
from ddselect.protocol.types import AttentionBlock, GenParams, ModelInfo, TokenScoreRecord

ATTENTION_MODES = ("none", "uniform", "hash", "canned")


@dataclass
class MockConfig:
    """Fixture description for a mock backend run."""

    probabilities: dict[str, float]
    generations: dict[str, str] = field(default_factory=dict)
    default_generation: str | None = None
    attention_mode: str = "hash"
    attention_constant: float = 0.5
    canned_attention: dict[str, list[list[float]]] = field(default_factory=dict)
    embedding_dim: int = 8
    max_context_tokens: int = 8192
    max_new_tokens_ceiling: int = 4096
    model_id: str = "mock-unigram-v1"
    tokenizer_id: str = "whitespace"

    def validate(self) -> None:
        if not self.probabilities:
            raise MockConfigError("mock needs a non-empty unigram probability table")
        for token, p in self.probabilities.items():
            if not isinstance(p, (int, float)) or not math.isfinite(p) or p <= 0 or p > 1:
                raise MockConfigError(f"probability for token {token!r} must be in (0, 1], got {p!r}")
        total = math.fsum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9:
            raise MockConfigError(f"unigram probabilities sum to {total!r}, not 1 within 1e-9")
        if self.attention_mode not in ATTENTION_MODES:
            raise MockConfigError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        if self.embedding_dim <= 0:
            raise MockConfigError("embedding_dim must be > 0")
        for target, rows in self.canned_attention.items():
            # Constructing the block runs the triangularity checks.
            AttentionBlock(n=len(rows), rows=tuple(tuple(float(w) for w in row) for row in rows))
            del target

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "MockConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise MockConfigError(f"unknown mock config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


def hash_unit_floats(seed_text: str, count: int) -> list[float]:
    """``count`` deterministic floats in [0, 1) derived from sha256(seed_text)."""
    out: list[float] = []
    counter = 0
    while len(out) < count:
        digest = hashlib.sha256(f"{counter}:{seed_text}".encode("utf-8")).digest()
        for off in range(0, 32, 8):
            out.append(int.from_bytes(digest[off : off + 8], "big") / 2.0**64)
            if len(out) == count:
                break
        counter += 1
    return out


class MockBackend(ScorerBackend):
    """In-process deterministic backend for tests and dry runs."""

    def __init__(self, config: MockConfig):
        config.validate()
        self.config = config
        self._lock = threading.Lock()
        self.counters: dict[str, int] = {"score": 0, "generate": 0, "embed": 0, "info": 0}

    @classmethod
    def from_config_file(cls, path: str | Path) -> "MockBackend":
        path = Path(path)
        if not path.is_file():
            raise MockConfigError(f"mock config file not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            obj = yaml.safe_load(fh)
        if not isinstance(obj, dict):
            raise MockConfigError("mock config must be a mapping")
        return cls(MockConfig.from_dict(obj))

    def _count(self, endpoint: str) -> None:
        with self._lock:
            self.counters[endpoint] += 1

    def reset_counters(self) -> None:
        with self._lock:
            for key in self.counters:
                self.counters[key] = 0

    def total_calls(self) -> int:
        with self._lock:
            return sum(self.counters.values())

    # --- protocol operations ------------------------------------------

    def _tokenize(self, text: str) -> list[str]:
        return text.split()

    def _attention_for(self, target: str, n: int) -> AttentionBlock | None:
        mode = self.config.attention_mode
        if mode == "none":
            return None
        if mode == "canned":
            rows = self.config.canned_attention.get(target)
            if rows is None:
                raise ProtocolError(f"no canned attention block for target {target!r}")
            return AttentionBlock(n=len(rows), rows=tuple(tuple(float(w) for w in row) for row in rows))
        if mode == "uniform":
            c = self.config.attention_constant
            return AttentionBlock(n=n, rows=tuple(tuple(c for _ in range(j)) for j in range(n)))
        # hash mode: stable pseudo-random weights in [0, 1)
        flat = hash_unit_floats(target, n * (n - 1) // 2)
        rows: list[tuple[float, ...]] = []
        pos = 0
        for j in range(n):
            rows.append(tuple(flat[pos : pos + j]))
            pos += j
        return AttentionBlock(n=n, rows=tuple(rows))

    def score_target(self, context: str, target: str, want_attention: bool = False) -> TokenScoreRecord:
        self._count("score")
        tokens = self._tokenize(target)
        if not tokens:
            raise EmptyTargetError("target tokenizes to zero tokens")
        context_tokens = len(self._tokenize(context))
        if context_tokens + len(tokens) > self.config.max_context_tokens:
            raise ContextWindowError(
                f"{context_tokens} context + {len(tokens)} target tokens exceed window "
                f"{self.config.max_context_tokens}",
                context_tokens=context_tokens,
                target_tokens=len(tokens),
                window=self.config.max_context_tokens,
            )
        logprobs = []
        for token in tokens:
            p = self.config.probabilities.get(token)
            if p is None:
                raise ProtocolError(f"token {token!r} not in mock vocabulary")
            logprobs.append(math.log(p))
        attention = self._attention_for(target, len(tokens)) if want_attention else None
        return TokenScoreRecord(target_tokens=tuple(tokens), logprobs=tuple(logprobs), attention=attention)

    def generate(self, prompt: str, params: GenParams) -> str:
        self._count("generate")
        if not prompt:
            raise ProtocolError("prompt must be non-empty")
        params.check_ceiling(self.config.max_new_tokens_ceiling)
        text = self.config.generations.get(prompt, self.config.default_generation)
        if text is None:
            raise ProtocolError(f"no canned generation for prompt {prompt!r:.80}")
        for stop in params.stop_sequences:
            idx = text.find(stop)
            if idx >= 0:
                text = text[:idx]
        tokens = self._tokenize(text)
        if len(tokens) > params.max_new_tokens:
            text = " ".join(tokens[: params.max_new_tokens])
        return text

    def embed(self, text: str) -> list[float]:
        self._count("embed")
        if not text:
            raise ProtocolError("text must be non-empty")
        return hash_unit_floats(text, self.config.embedding_dim)

    def model_info(self) -> ModelInfo:
        self._count("info")
        return ModelInfo(
            model_id=self.config.model_id,
            tokenizer_id=self.config.tokenizer_id,
            attention_layer_policy=f"mock:{self.config.attention_mode}",
            embedding_dim=self.config.embedding_dim,
        )
