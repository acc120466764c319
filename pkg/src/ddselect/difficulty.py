"""Difficulty metrics over token score records.

Three perplexity-based metrics per sample:

* ``d1`` — perplexity of the prompt text alone (how hard the instruction
  is to predict);
* ``d2`` — conditional perplexity of the model's own greedy response given
  the prompt (how unsure the model is of its answer);
* ``d3`` — conditional perplexity of the reference response given the
  prompt (how far the reference is from the model's distribution).

``atten_d2``/``atten_d3`` reweight the per-token log-probabilities by an
importance score aggregated from the attention each token receives from
later tokens.  All metrics use natural logs; the base-2 entropy utilities
live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ddselect.corpus import PromptTemplate, Sample, flatten_prompt
from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.errors import ProtocolError
from ddselect.protocol.types import AttentionBlock, GenParams

AGGREGATION_MODES = ("mean", "max", "none")


class DifficultyError(ValueError):
    """Invalid input to a difficulty computation."""


class UnscoreableSampleError(DifficultyError):
    """The sample cannot be scored (e.g. the model generated an empty response)."""


@dataclass(frozen=True)
class DifficultyVector:
    """All difficulty values for one sample under one model and mode."""

    d1: float
    d2: float
    d3: float
    atten_d2: float | None
    atten_d3: float | None
    aggregation: str
    generated_response: str

    def __post_init__(self) -> None:
        for name, value in (("d1", self.d1), ("d2", self.d2), ("d3", self.d3)):
            if not math.isfinite(value) or value < 1.0:
                raise DifficultyError(f"{name}={value!r} must be finite and >= 1")
        for name, value in (("atten_d2", self.atten_d2), ("atten_d3", self.atten_d3)):
            if value is not None and (not math.isfinite(value) or value < 1.0):
                raise DifficultyError(f"{name}={value!r} must be finite and >= 1")
        if self.aggregation not in AGGREGATION_MODES:
            raise DifficultyError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.aggregation == "none" and (self.atten_d2 is not None or self.atten_d3 is not None):
            raise DifficultyError("aggregation 'none' cannot carry attention-weighted values")


def _check_logprobs(logprobs: Sequence[float]) -> None:
    if len(logprobs) == 0:
        raise DifficultyError("empty logprob list")
    for lp in logprobs:
        if not math.isfinite(lp):
            raise DifficultyError(f"non-finite logprob {lp!r}")
        if lp > 0:
            raise DifficultyError(f"positive logprob {lp!r}")


def ppl_from_logprobs(logprobs: Sequence[float]) -> float:
    """exp of the negated mean log-probability; always >= 1."""
    _check_logprobs(logprobs)
    return math.exp(-math.fsum(logprobs) / len(logprobs))


def weighted_ppl(logprobs: Sequence[float], importance: Sequence[float]) -> float:
    """Importance-weighted perplexity: exp(-sum(I*lp) / sum(I)).

    Reduces exactly to :func:`ppl_from_logprobs` for uniform importance and
    is invariant under positive rescaling of the importance vector.
    """
    _check_logprobs(logprobs)
    if len(importance) != len(logprobs):
        raise DifficultyError(f"{len(importance)} importance scores for {len(logprobs)} logprobs")
    for w in importance:
        if not math.isfinite(w) or w < 0:
            raise DifficultyError(f"importance scores must be finite and >= 0, got {w!r}")
    total = math.fsum(importance)
    if total <= 0:
        raise DifficultyError("importance scores sum to zero")
    if len(logprobs) == 1:
        # The weighted mean of one value is that value; skip the w*lp/w
        # round trip so the single-token case is exactly exp(-logprob).
        return math.exp(-logprobs[0])
    weighted = math.fsum(w * lp for w, lp in zip(importance, logprobs))
    return math.exp(-weighted / total)


def importance_from_attention(block: AttentionBlock, mode: str) -> list[float]:
    """Per-token importance: aggregate of the attention a token receives
    from all later tokens.

    The last token has no successors; it gets the mean of the other
    importance scores (a neutral weight), or 1.0 when n == 1, so no token's
    log-probability ever drops out of the weighted sum.
    """
    if mode not in ("mean", "max"):
        raise DifficultyError(f"aggregation mode must be 'mean' or 'max', got {mode!r}")
    n = block.n
    if n == 1:
        return [1.0]
    scores: list[float] = []
    for i in range(n - 1):
        incoming = [block.rows[j][i] for j in range(i + 1, n)]
        scores.append(math.fsum(incoming) / len(incoming) if mode == "mean" else max(incoming))
    scores.append(math.fsum(scores) / len(scores))
    return scores


def entropy(dist: Sequence[float]) -> float:
    """Base-2 entropy of a probability vector (0*log0 := 0).

    The all-equal case is computed in closed form as log2(n): it is exact
    there, where the termwise sum would pick up rounding noise.
    """
    if len(dist) == 0:
        raise DifficultyError("empty distribution")
    for p in dist:
        if not math.isfinite(p) or p < 0:
            raise DifficultyError(f"probabilities must be finite and >= 0, got {p!r}")
    total = math.fsum(dist)
    if abs(total - 1.0) > 1e-9:
        raise DifficultyError(f"probabilities sum to {total!r}, not 1 within 1e-9")
    if all(p == dist[0] for p in dist):
        return math.log2(len(dist))
    return -math.fsum(p * math.log2(p) for p in dist if p > 0.0)


def perplexity_from_entropy(h: float) -> float:
    """2**h, snapped to the exact antilog when h is the rounded base-2 log
    of a nearby integer (keeps entropy -> perplexity exact on uniform
    distributions, where libm pow alone drifts by an ulp).
    """
    if not math.isfinite(h):
        raise DifficultyError(f"entropy must be finite, got {h!r}")
    value = 2.0**h
    nearest = round(value)
    if nearest >= 1 and math.log2(nearest) == h:
        return float(nearest)
    return value


def compute_d1(sample: Sample, backend: ScorerBackend, template: PromptTemplate) -> float:
    """Perplexity of the flattened prompt under the backend model."""
    prompt = flatten_prompt(sample, template)
    record = backend.score_target("", prompt, want_attention=False)
    return ppl_from_logprobs(record.logprobs)


def _weighted_from_record(record, mode: str) -> float:
    if record.attention is None:
        raise ProtocolError(
            f"aggregation mode {mode!r} needs attention but the backend returned none"
        )
    importance = importance_from_attention(record.attention, mode)
    return weighted_ppl(record.logprobs, importance)


def compute_d2(
    sample: Sample,
    backend: ScorerBackend,
    params: GenParams,
    mode: str = "none",
    template: PromptTemplate | None = None,
) -> tuple[float, float | None, str]:
    """Conditional perplexity of the model's own greedy response.

    Returns ``(d2, atten_d2, generated_response)``.  Raises
    :class:`UnscoreableSampleError` when the generation is empty, since the
    metric is undefined for a zero-token response.
    """
    prompt = flatten_prompt(sample, template or PromptTemplate())
    generated = backend.generate(prompt, params)
    if not generated.strip():
        raise UnscoreableSampleError(f"sample {sample.id!r}: model generated an empty response")
    record = backend.score_target(prompt, generated, want_attention=mode != "none")
    d2 = ppl_from_logprobs(record.logprobs)
    atten_d2 = _weighted_from_record(record, mode) if mode != "none" else None
    return d2, atten_d2, generated


def compute_d3(
    sample: Sample,
    backend: ScorerBackend,
    mode: str = "none",
    template: PromptTemplate | None = None,
) -> tuple[float, float | None]:
    """Conditional perplexity of the reference response given the prompt."""
    prompt = flatten_prompt(sample, template or PromptTemplate())
    record = backend.score_target(prompt, sample.response, want_attention=mode != "none")
    d3 = ppl_from_logprobs(record.logprobs)
    atten_d3 = _weighted_from_record(record, mode) if mode != "none" else None
    return d3, atten_d3


def compute_difficulty(
    sample: Sample,
    backend: ScorerBackend,
    template: PromptTemplate,
    params: GenParams,
    mode: str,
) -> DifficultyVector:
    """All metrics for one sample; the pipeline's per-sample unit of work."""
    d1 = compute_d1(sample, backend, template)
    d2, atten_d2, generated = compute_d2(sample, backend, params, mode=mode, template=template)
    d3, atten_d3 = compute_d3(sample, backend, mode=mode, template=template)
    return DifficultyVector(
        d1=d1,
        d2=d2,
        d3=d3,
        atten_d2=atten_d2,
        atten_d3=atten_d3,
        aggregation=mode,
        generated_response=generated,
    )
