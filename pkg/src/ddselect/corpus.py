"""Corpus ingestion: line-delimited instruction records -> validated Samples.

Input files are UTF-8 with one JSON object per line.  Required keys are
``id``, ``instruction`` and ``response``; optional keys are ``history``
(a list of ``{"user": ..., "assistant": ...}`` turns) and ``meta`` (a
string-to-string map).  Unknown top-level keys are preserved into ``meta``
under a ``_raw.`` prefix so a load/serialize round trip loses nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator


class CorpusError(Exception):
    """Malformed corpus input (parse error, missing field, duplicate id)."""


# Character-length histogram buckets: geometric, closed below / open above.
_BUCKET_EDGES = (16, 64, 256, 1024, 4096)


def _length_bucket(n: int) -> str:
    lo = 0
    for edge in _BUCKET_EDGES:
        if n < edge:
            return f"{lo}-{edge - 1}"
        lo = edge
    return f"{_BUCKET_EDGES[-1]}+"


@dataclass(frozen=True)
class Turn:
    """One prior dialogue exchange preceding the instruction."""

    user: str
    assistant: str


@dataclass(frozen=True)
class Sample:
    """One instruction-tuning record: instruction Q, reference response A.

    ``instruction`` and ``response`` are whitespace-trimmed at load time and
    non-empty; ``history`` holds prior turns in order.  Immutable, so safe to
    hand to concurrent workers.
    """

    id: str
    instruction: str
    response: str
    history: tuple[Turn, ...] = ()
    meta: dict[str, str] = field(default_factory=dict)


@dataclass
class CorpusStats:
    """Acceptance/rejection counts gathered while streaming a corpus file."""

    count: int = 0
    rejected: int = 0
    duplicate_id_count: int = 0
    instruction_length_histogram: dict[str, int] = field(default_factory=dict)
    response_length_histogram: dict[str, int] = field(default_factory=dict)

    def _record(self, sample: Sample) -> None:
        self.count += 1
        for hist, text in (
            (self.instruction_length_histogram, sample.instruction),
            (self.response_length_histogram, sample.response),
        ):
            bucket = _length_bucket(len(text))
            hist[bucket] = hist.get(bucket, 0) + 1


@dataclass(frozen=True)
class PromptTemplate:
    """How history turns and the final instruction are linearized into one
    prompt string.  ``turn`` is rendered once per history turn (placeholders
    ``{user}``/``{assistant}``); ``instruction`` once at the end
    (placeholder ``{instruction}``); the pieces are concatenated as-is.
    """

    turn: str = "{user}\n{assistant}\n"
    instruction: str = "{instruction}"


#: With no history this renders the instruction text unchanged.
IDENTITY_TEMPLATE = PromptTemplate()


def flatten_prompt(sample: Sample, template: PromptTemplate = IDENTITY_TEMPLATE) -> str:
    """Render a sample into the single prompt string used for scoring.

    Pure function: equal inputs give byte-equal output.
    """
    parts = [template.turn.format(user=t.user, assistant=t.assistant) for t in sample.history]
    parts.append(template.instruction.format(instruction=sample.instruction))
    return "".join(parts)


def _parse_record(obj: dict[str, Any], line_no: int) -> Sample:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {line_no}: record is not an object")
    for key in ("id", "instruction", "response"):
        if key not in obj:
            raise CorpusError(f"line {line_no}: missing required key {key!r}")
        if not isinstance(obj[key], str):
            raise CorpusError(f"line {line_no}: key {key!r} must be a string")

    sample_id = obj["id"]
    instruction = obj["instruction"].strip()
    response = obj["response"].strip()
    if not sample_id:
        raise CorpusError(f"line {line_no}: empty id")
    if not instruction:
        raise CorpusError(f"line {line_no}: empty instruction")
    if not response:
        raise CorpusError(f"line {line_no}: empty response")

    history: list[Turn] = []
    raw_history = obj.get("history", [])
    if not isinstance(raw_history, list):
        raise CorpusError(f"line {line_no}: history must be a list")
    for i, turn in enumerate(raw_history):
        if not isinstance(turn, dict) or not isinstance(turn.get("user"), str) or not isinstance(turn.get("assistant"), str):
            raise CorpusError(f"line {line_no}: history[{i}] must have string 'user' and 'assistant'")
        if not turn["user"].strip() or not turn["assistant"].strip():
            raise CorpusError(f"line {line_no}: history[{i}] has an empty side")
        history.append(Turn(user=turn["user"], assistant=turn["assistant"]))

    meta: dict[str, str] = {}
    raw_meta = obj.get("meta", {})
    if not isinstance(raw_meta, dict):
        raise CorpusError(f"line {line_no}: meta must be an object")
    for k, v in raw_meta.items():
        meta[str(k)] = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False, sort_keys=True)
    for k, v in obj.items():
        if k in ("id", "instruction", "response", "history", "meta"):
            continue
        meta[f"_raw.{k}"] = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False, sort_keys=True)

    return Sample(id=sample_id, instruction=instruction, response=response, history=tuple(history), meta=meta)


def load_corpus(
    path: str | Path,
    on_error: str = "fail_fast",
) -> tuple[Iterator[Sample], CorpusStats]:
    """Stream validated Samples from a line-delimited corpus file.

    Returns ``(iterator, stats)``; ``stats`` fills in as the iterator is
    consumed and is complete once it is exhausted.  Output order equals
    input line order among accepted records (single pass).

    ``on_error="fail_fast"`` raises :class:`CorpusError` naming the first
    offending line (malformed record or duplicate id);
    ``on_error="skip_and_count"`` counts and skips bad lines instead.
    """
    if on_error not in ("fail_fast", "skip_and_count"):
        raise ValueError(f"unknown on_error policy: {on_error!r}")
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")

    stats = CorpusStats()

    def _iter() -> Iterator[Sample]:
        seen_ids: set[str] = set()
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    if on_error == "fail_fast":
                        raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
                    stats.rejected += 1
                    continue
                try:
                    sample = _parse_record(obj, line_no)
                except CorpusError:
                    if on_error == "fail_fast":
                        raise
                    stats.rejected += 1
                    continue
                if sample.id in seen_ids:
                    if on_error == "fail_fast":
                        raise CorpusError(f"line {line_no}: duplicate id {sample.id!r}")
                    stats.duplicate_id_count += 1
                    stats.rejected += 1
                    continue
                seen_ids.add(sample.id)
                stats._record(sample)
                yield sample

    return _iter(), stats


def sample_to_record(sample: Sample) -> dict[str, Any]:
    """Serialize a Sample back to the line-format record dict."""
    record: dict[str, Any] = {
        "id": sample.id,
        "instruction": sample.instruction,
        "response": sample.response,
    }
    if sample.history:
        record["history"] = [{"user": t.user, "assistant": t.assistant} for t in sample.history]
    if sample.meta:
        record["meta"] = dict(sample.meta)
    return record


def dumps_sample_line(sample: Sample) -> str:
    """One corpus line (no trailing newline) for a Sample."""
    return json.dumps(sample_to_record(sample), ensure_ascii=False, sort_keys=True)
