"""Backend-agnostic protocol conformance checks.

The same suite runs against the in-process mock, the mock behind HTTP, and
any real sidecar: give it a backend plus a few probe texts the backend can
tokenize.  Each check raises ``AssertionError`` with a readable message on
violation, so the suite plugs straight into pytest or a smoke script.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.types import GenParams


@dataclass(frozen=True)
class ConformanceProbe:
    """Inputs a particular backend is known to handle."""

    score_texts: tuple[str, ...]
    generate_prompt: str
    embed_texts: tuple[str, ...]
    context: str = ""
    expects_attention: bool = True
    gen_params: GenParams = GenParams(max_new_tokens=64)


def check_info_stability(backend: ScorerBackend) -> None:
    first = backend.model_info()
    second = backend.model_info()
    assert first == second, f"model_info not stable: {first} != {second}"
    assert first.model_id, "model_id must be non-empty"
    assert first.embedding_dim > 0, "embedding_dim must be positive"


def check_score_records(backend: ScorerBackend, probe: ConformanceProbe) -> None:
    for text in probe.score_texts:
        rec = backend.score_target(probe.context, text, want_attention=False)
        assert len(rec.target_tokens) >= 1, f"no tokens for {text!r}"
        assert len(rec.logprobs) == len(rec.target_tokens)
        for lp in rec.logprobs:
            assert math.isfinite(lp) and lp <= 0, f"bad logprob {lp} for {text!r}"
        assert rec.attention is None, "attention returned although not requested"
        again = backend.score_target(probe.context, text, want_attention=False)
        assert again.logprobs == rec.logprobs, f"scoring not deterministic for {text!r}"


def check_attention_blocks(backend: ScorerBackend, probe: ConformanceProbe) -> None:
    for text in probe.score_texts:
        rec = backend.score_target(probe.context, text, want_attention=True)
        if rec.attention is None:
            assert not probe.expects_attention, f"backend advertised attention but returned none for {text!r}"
            continue
        block = rec.attention
        assert block.n == len(rec.target_tokens)
        # Type construction already enforced triangularity/finiteness;
        # re-check non-negativity explicitly for the report.
        for j, row in enumerate(block.rows):
            assert len(row) == j, f"row {j} has {len(row)} entries"
            assert all(w >= 0 for w in row), f"negative attention in row {j}"


def check_generate_determinism(backend: ScorerBackend, probe: ConformanceProbe) -> None:
    outputs = {backend.generate(probe.generate_prompt, probe.gen_params) for _ in range(3)}
    assert len(outputs) == 1, f"greedy generation not deterministic: {outputs}"


def check_stop_sequences(backend: ScorerBackend, probe: ConformanceProbe, stop: str) -> None:
    params = GenParams(
        max_new_tokens=probe.gen_params.max_new_tokens,
        stop_sequences=(stop,),
    )
    text = backend.generate(probe.generate_prompt, params)
    assert stop not in text, f"stop sequence {stop!r} survived in {text!r}"


def check_embeddings(backend: ScorerBackend, probe: ConformanceProbe) -> None:
    dim = backend.model_info().embedding_dim
    seen: dict[tuple[float, ...], str] = {}
    for text in probe.embed_texts:
        vec = backend.embed(text)
        assert len(vec) == dim, f"embedding length {len(vec)} != {dim}"
        assert all(math.isfinite(v) for v in vec), f"non-finite embedding for {text!r}"
        assert backend.embed(text) == vec, f"embedding not deterministic for {text!r}"
        key = tuple(vec)
        assert key not in seen or seen[key] == text, f"embedding collision: {text!r} vs {seen[key]!r}"
        seen[key] = text


ALL_CHECKS = (
    check_info_stability,
    check_score_records,
    check_attention_blocks,
    check_generate_determinism,
    check_embeddings,
)


def run_conformance(backend: ScorerBackend, probe: ConformanceProbe) -> list[str]:
    """Run every check; returns the list of passed check names."""
    passed = []
    for check in ALL_CHECKS:
        if check is check_info_stability:
            check(backend)
        else:
            check(backend, probe)
        passed.append(check.__name__)
    return passed
