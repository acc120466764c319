"""Stage 1: the model self-scores sample quality; keep samples at/above delta.

The scoring prompt lives in a versioned template file with a ``{{qa_pairs}}``
placeholder (its hash enters the score-cache key, so editing the prompt can
never serve stale scores).  The model's raw output is parsed for a
``score`` marker; parse failures are retried, then excluded and counted.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from ddselect.corpus import Sample
from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.errors import ScorerError
from ddselect.protocol.types import GenParams

QA_PAIRS_PLACEHOLDER = "{{qa_pairs}}"
DEFAULT_TEMPLATE_RESOURCE = "quality_prompt_v1.txt"

STATUS_PARSED = "parsed"
STATUS_PARSE_FAILED = "parse_failed"
STATUS_BACKEND_FAILED = "backend_failed"


@dataclass(frozen=True)
class QualityResult:
    """Outcome of quality-scoring one sample."""

    sample_id: str
    raw_output: str
    score: int | None
    status: str
    warning: str | None = None


@dataclass(frozen=True)
class ScoreParse:
    """Total parse result: either a score in [0, 100] or a typed failure."""

    score: int | None
    failure: str | None = None
    warning: str | None = None


@dataclass(frozen=True)
class RetryPolicy:
    """How often to re-ask after a parse failure.

    Retries reuse the identical prompt, so under greedy decoding they only
    help after transient backend faults.  Retryable transport failures are
    retried inside the client; once its budget is spent the stage aborts
    (the score cache makes the rerun resume where it stopped).
    """

    parse_retries: int = 2


def load_quality_template(path: str | Path | None = None) -> str:
    """Load the scoring-prompt template (packaged default when path is None)."""
    if path is None:
        text = resources.files("ddselect.templates").joinpath(DEFAULT_TEMPLATE_RESOURCE).read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    if QA_PAIRS_PLACEHOLDER not in text:
        raise ValueError(f"quality template is missing the {QA_PAIRS_PLACEHOLDER} placeholder")
    return text


def render_dialogue(sample: Sample) -> str:
    """History turns plus the final instruction/response pair, role-tagged."""
    lines: list[str] = []
    for turn in sample.history:
        lines.append(f"User: {turn.user}")
        lines.append(f"Assistant: {turn.assistant}")
    lines.append(f"User: {sample.instruction}")
    lines.append(f"Assistant: {sample.response}")
    return "\n".join(lines)


def render_quality_prompt(sample: Sample, template: str) -> str:
    """Substitute the sample's dialogue into the template; byte-deterministic."""
    return template.replace(QA_PAIRS_PLACEHOLDER, render_dialogue(sample))


# 'score' not embedded in a longer word, then only braces/brackets/colon/
# equals/quotes/whitespace before the integer.
_SCORE_RE = re.compile(r"(?<![A-Za-z])score[\s\"'{}\[\]:=]*(-?\d+)", re.IGNORECASE)


def parse_score(raw: str) -> ScoreParse:
    """Extract the first integer following a 'score' marker.

    Total over arbitrary text: never raises.  Out-of-range integers are
    parse failures (no clamping); multiple markers with disagreeing values
    keep the first and carry a warning.
    """
    matches = _SCORE_RE.findall(raw)
    if not matches:
        return ScoreParse(score=None, failure="no score marker found")
    values = [int(m) for m in matches]
    warning = None
    if len(set(values)) > 1:
        warning = f"conflicting score markers {values}; using the first"
    first = values[0]
    if not 0 <= first <= 100:
        return ScoreParse(score=None, failure=f"score {first} outside [0, 100]", warning=warning)
    return ScoreParse(score=first, failure=None, warning=warning)


def score_sample(
    sample: Sample,
    backend: ScorerBackend,
    template: str,
    params: GenParams,
    retry: RetryPolicy,
) -> QualityResult:
    """Generate and parse one quality score, applying the retry policy."""
    prompt = render_quality_prompt(sample, template)
    raw = ""
    parsed = ScoreParse(score=None, failure="not attempted")
    for _attempt in range(retry.parse_retries + 1):
        try:
            raw = backend.generate(prompt, params)
        except ScorerError as exc:
            if exc.retryable:
                raise  # out of client-level retries; abort the stage
            return QualityResult(sample.id, raw_output="", score=None, status=STATUS_BACKEND_FAILED, warning=str(exc))
        parsed = parse_score(raw)
        if parsed.score is not None:
            return QualityResult(sample.id, raw, parsed.score, STATUS_PARSED, warning=parsed.warning)
    return QualityResult(sample.id, raw, None, STATUS_PARSE_FAILED, warning=parsed.failure)


def stage1_filter(
    samples: Iterable[Sample],
    backend: ScorerBackend,
    delta: int,
    template: str,
    params: GenParams,
    retry: RetryPolicy = RetryPolicy(),
    concurrency: int = 1,
) -> Iterator[tuple[Sample, QualityResult]]:
    """Score samples concurrently, yielding (sample, result) in input order.

    A sample is retained downstream iff its status is ``parsed`` and
    ``score >= delta``; use :func:`is_retained`.
    """

    def work(sample: Sample) -> tuple[Sample, QualityResult]:
        return sample, score_sample(sample, backend, template, params, retry)

    if concurrency <= 1:
        for sample in samples:
            yield work(sample)
        return
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        yield from pool.map(work, samples)


def is_retained(result: QualityResult, delta: int) -> bool:
    return result.status == STATUS_PARSED and result.score is not None and result.score >= delta
