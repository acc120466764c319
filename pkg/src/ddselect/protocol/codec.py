"""Wire codec for scorer-protocol messages.

Messages are single-line UTF-8 JSON records, newline-terminated.  Floats
are written with 17 significant digits so any IEEE-754 double survives the
round trip; NaN/Infinity are rejected on both encode and decode.  Decoding
is strict about the fields it knows (types, triangularity) but tolerates
unknown keys so backends may attach extra diagnostics.
"""

from __future__ import annotations

import json
import math
from typing import Any

from ddselect.protocol.errors import ProtocolError
from ddselect.protocol.types import AttentionBlock, ModelInfo, TokenScoreRecord


def _encode_value(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ProtocolError("cannot encode non-finite float")
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode_value(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k), ensure_ascii=False)}:{_encode_value(v)}" for k, v in value.items())
        return "{" + ",".join(items) + "}"
    raise ProtocolError(f"cannot encode value of type {type(value).__name__}")


def encode(record: dict[str, Any]) -> bytes:
    """Encode one protocol record as a newline-terminated JSON line."""
    return (_encode_value(record) + "\n").encode("utf-8")


def _reject_constant(name: str) -> Any:
    raise ProtocolError(f"non-finite constant {name!r} in protocol message")


def decode(data: bytes | str) -> dict[str, Any]:
    """Decode one protocol record, rejecting NaN/Infinity."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid protocol JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("protocol message is not an object")
    return obj


# --- score records ---------------------------------------------------------


def score_record_to_wire(rec: TokenScoreRecord) -> dict[str, Any]:
    wire: dict[str, Any] = {
        "target_tokens": list(rec.target_tokens),
        "logprobs": [float(lp) for lp in rec.logprobs],
        "attention": None,
    }
    if rec.attention is not None:
        wire["attention"] = {
            "n": rec.attention.n,
            "weights": [list(row) for row in rec.attention.rows],
        }
    return wire


def encode_score_record(rec: TokenScoreRecord) -> bytes:
    return encode(score_record_to_wire(rec))


def attention_from_wire(obj: Any) -> AttentionBlock:
    if not isinstance(obj, dict):
        raise ProtocolError("attention must be an object")
    n = obj.get("n")
    weights = obj.get("weights")
    if not isinstance(n, int) or not isinstance(weights, list):
        raise ProtocolError("attention needs integer 'n' and list 'weights'")
    rows: list[tuple[float, ...]] = []
    for j, row in enumerate(weights):
        if not isinstance(row, list):
            raise ProtocolError(f"attention row {j} is not a list")
        vals = []
        for w in row:
            if isinstance(w, bool) or not isinstance(w, (int, float)):
                raise ProtocolError(f"attention row {j} holds a non-number")
            vals.append(float(w))
        rows.append(tuple(vals))
    # AttentionBlock enforces lower-triangularity and finiteness itself.
    return AttentionBlock(n=n, rows=tuple(rows))


def score_record_from_wire(obj: dict[str, Any]) -> TokenScoreRecord:
    tokens = obj.get("target_tokens")
    logprobs = obj.get("logprobs")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ProtocolError("target_tokens must be a list of strings")
    if not isinstance(logprobs, list):
        raise ProtocolError("logprobs must be a list")
    lps = []
    for lp in logprobs:
        if isinstance(lp, bool) or not isinstance(lp, (int, float)):
            raise ProtocolError("logprobs hold a non-number")
        lps.append(float(lp))
    attention = None
    if obj.get("attention") is not None:
        attention = attention_from_wire(obj["attention"])
    return TokenScoreRecord(target_tokens=tuple(tokens), logprobs=tuple(lps), attention=attention)


def decode_score_record(data: bytes | str) -> TokenScoreRecord:
    return score_record_from_wire(decode(data))


# --- small records ---------------------------------------------------------


def model_info_to_wire(info: ModelInfo) -> dict[str, Any]:
    return {
        "model_id": info.model_id,
        "tokenizer_id": info.tokenizer_id,
        "attention_layer_policy": info.attention_layer_policy,
        "embedding_dim": info.embedding_dim,
    }


def model_info_from_wire(obj: dict[str, Any]) -> ModelInfo:
    try:
        return ModelInfo(
            model_id=str(obj["model_id"]),
            tokenizer_id=str(obj["tokenizer_id"]),
            attention_layer_policy=str(obj["attention_layer_policy"]),
            embedding_dim=int(obj["embedding_dim"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad model-info record: {exc}") from exc


def embedding_from_wire(obj: dict[str, Any]) -> list[float]:
    emb = obj.get("embedding")
    if not isinstance(emb, list) or not emb:
        raise ProtocolError("embedding must be a non-empty list")
    out = []
    for v in emb:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ProtocolError("embedding holds a non-number")
        v = float(v)
        if not math.isfinite(v):
            raise ProtocolError("embedding holds a non-finite value")
        out.append(v)
    return out


def generation_from_wire(obj: dict[str, Any]) -> str:
    text = obj.get("text")
    if not isinstance(text, str):
        raise ProtocolError("generation record needs string 'text'")
    return text
