"""FastAPI service exposing any ScorerBackend over the wire protocol.

Request bodies are validated with pydantic models; responses are emitted
through the protocol codec so logprobs keep 17 significant digits.  Errors
come back as ``{"error": {"code", "message", "details"}}`` with 400 for
non-retryable request problems and 503 for backend faults.
"""

from __future__ import annotations

from fastapi import FastAPI, Request, Response
from pydantic import BaseModel, Field

from ddselect.protocol import codec
from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.errors import BackendUnreachableError, ContextWindowError, ScorerError
from ddselect.protocol.types import GenParams


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


def _json(payload: dict, status_code: int = 200) -> Response:
    return Response(content=codec.encode(payload), media_type="application/json", status_code=status_code)


def _error_response(exc: ScorerError) -> Response:
    details: dict = {}
    if isinstance(exc, ContextWindowError):
        details = {
            "context_tokens": exc.context_tokens,
            "target_tokens": exc.target_tokens,
            "window": exc.window,
        }
    status = 503 if isinstance(exc, BackendUnreachableError) else 400
    return _json({"error": {"code": exc.code, "message": str(exc), "details": details}}, status)


def create_app(backend: ScorerBackend) -> FastAPI:
    """Wrap a backend in the HTTP protocol surface."""
    app = FastAPI(title="scorer-backend", docs_url=None, redoc_url=None)

    @app.exception_handler(ScorerError)
    async def _scorer_error(_request: Request, exc: ScorerError) -> Response:
        return _error_response(exc)

    @app.post("/v1/score")
    def score(req: ScoreRequest) -> Response:
        rec = backend.score_target(req.context, req.target, want_attention=req.want_attention)
        return Response(content=codec.encode_score_record(rec), media_type="application/json")

    @app.post("/v1/generate")
    def generate(req: GenerateRequest) -> Response:
        params = GenParams(max_new_tokens=req.max_new_tokens, stop_sequences=tuple(req.stop))
        return _json({"text": backend.generate(req.prompt, params)})

    @app.post("/v1/embed")
    def embed(req: EmbedRequest) -> Response:
        return _json({"embedding": backend.embed(req.text)})

    @app.get("/v1/info")
    def info() -> Response:
        return _json(codec.model_info_to_wire(backend.model_info()))

    if hasattr(backend, "counters"):

        @app.get("/v1/mock/counters")
        def counters() -> Response:
            return _json(dict(backend.counters))

    return app
