"""Domain types carried over the scorer wire protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ddselect.protocol.errors import ProtocolError


@dataclass(frozen=True)
class AttentionBlock:
    """Strictly lower-triangular attention over n target tokens.

    ``rows[j]`` holds the attention row of target token j restricted to the
    earlier target tokens 0..j-1, already aggregated over heads by the
    backend, so ``len(rows[j]) == j`` and ``rows[0] == ()``.  Rows are
    softmaxed over the full context, so a target-restricted row may sum to
    less than 1; entries are only required to be finite and non-negative.
    """

    n: int
    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ProtocolError(f"attention block needs n >= 1, got {self.n}")
        if len(self.rows) != self.n:
            raise ProtocolError(f"attention block has {len(self.rows)} rows, expected {self.n}")
        for j, row in enumerate(self.rows):
            if len(row) != j:
                raise ProtocolError(
                    f"attention row {j} has {len(row)} entries; strict lower-triangularity requires {j}"
                )
            for i, w in enumerate(row):
                if not math.isfinite(w):
                    raise ProtocolError(f"attention weight [{j}][{i}] is not finite")
                if w < 0:
                    raise ProtocolError(f"attention weight [{j}][{i}] is negative")


@dataclass(frozen=True)
class TokenScoreRecord:
    """Per-token natural-log probabilities for a scored target span."""

    target_tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    attention: AttentionBlock | None = None

    def __post_init__(self) -> None:
        if len(self.target_tokens) < 1:
            raise ProtocolError("score record needs at least one target token")
        if len(self.logprobs) != len(self.target_tokens):
            raise ProtocolError(
                f"{len(self.logprobs)} logprobs for {len(self.target_tokens)} tokens"
            )
        for lp in self.logprobs:
            if not math.isfinite(lp):
                raise ProtocolError("logprob is not finite")
            if lp > 0:
                raise ProtocolError(f"logprob {lp} is positive")
        if self.attention is not None and self.attention.n != len(self.target_tokens):
            raise ProtocolError(
                f"attention dimension {self.attention.n} != {len(self.target_tokens)} target tokens"
            )


@dataclass(frozen=True)
class GenParams:
    """Greedy-generation parameters (decoding is fixed to greedy in v1)."""

    max_new_tokens: int = 256
    decoding: str = "greedy"
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_new_tokens <= 0:
            raise ProtocolError(f"max_new_tokens must be > 0, got {self.max_new_tokens}")
        if self.decoding != "greedy":
            raise ProtocolError(f"unsupported decoding mode {self.decoding!r}")

    def check_ceiling(self, ceiling: int) -> None:
        if self.max_new_tokens > ceiling:
            raise ProtocolError(f"max_new_tokens {self.max_new_tokens} exceeds backend ceiling {ceiling}")


@dataclass(frozen=True)
class ModelInfo:
    """Stable backend identity; keys the score cache."""

    model_id: str
    tokenizer_id: str
    attention_layer_policy: str
    embedding_dim: int

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ProtocolError("model_id must be non-empty")
        if self.embedding_dim <= 0:
            raise ProtocolError(f"embedding_dim must be > 0, got {self.embedding_dim}")
