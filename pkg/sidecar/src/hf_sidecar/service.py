"""FastAPI surface implementing the scorer wire protocol.

Responses are emitted as single-line JSON with floats at 17 significant
digits, matching the protocol's serialization contract; request problems
come back as ``{"error": {"code", "message", "details"}}`` with status 400
and internal faults with 503.
"""

from __future__ import annotations

import json
import math
from typing import Any

from fastapi import FastAPI, Request, Response
from pydantic import BaseModel, Field

from hf_sidecar.backend import BackendRequestError, HFScorerBackend


class ScoreRequest(BaseModel):
    context: str = ""
    target: str
    want_attention: bool = False


class GenerateRequest(BaseModel):
    prompt: str
    max_new_tokens: int = Field(default=256, gt=0)
    stop: list[str] = Field(default_factory=list)


class EmbedRequest(BaseModel):
    text: str


def _encode_value(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite float in response")
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(str(k), ensure_ascii=False)}:{_encode_value(v)}" for k, v in value.items()) + "}"
    raise ValueError(f"cannot encode {type(value).__name__}")


def _json(payload: dict, status_code: int = 200) -> Response:
    return Response(
        content=_encode_value(payload) + "\n", media_type="application/json", status_code=status_code
    )


def create_app(backend: HFScorerBackend) -> FastAPI:
    app = FastAPI(title="hf-scorer-sidecar", docs_url=None, redoc_url=None)

    @app.exception_handler(BackendRequestError)
    async def _request_error(_request: Request, exc: BackendRequestError) -> Response:
        return _json({"error": {"code": exc.code, "message": str(exc), "details": exc.details}}, 400)

    @app.exception_handler(torch_oom_types())
    async def _oom(_request: Request, exc: Exception) -> Response:
        return _json(
            {"error": {"code": "window_exceeded", "message": f"out of memory: {exc}", "details": {}}}, 400
        )

    @app.post("/v1/score")
    def score(req: ScoreRequest) -> Response:
        result = backend.score(req.context, req.target, want_attention=req.want_attention)
        payload: dict[str, Any] = {
            "target_tokens": result.target_tokens,
            "logprobs": result.logprobs,
            "attention": None,
            "target_roundtrip_ok": result.target_roundtrip_ok,
        }
        if result.attention_rows is not None:
            payload["attention"] = {"n": len(result.attention_rows), "weights": result.attention_rows}
        return _json(payload)

    @app.post("/v1/generate")
    def generate(req: GenerateRequest) -> Response:
        return _json({"text": backend.generate(req.prompt, req.max_new_tokens, req.stop)})

    @app.post("/v1/embed")
    def embed(req: EmbedRequest) -> Response:
        return _json({"embedding": backend.embed(req.text)})

    @app.get("/v1/info")
    def info() -> Response:
        return _json(backend.info())

    return app


def torch_oom_types() -> type[Exception]:
    import torch

    return torch.cuda.OutOfMemoryError if torch.cuda.is_available() else MemoryError
