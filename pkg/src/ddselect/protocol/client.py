"""Scorer backend interface and the HTTP client implementation.

Anything that can score tokens implements :class:`ScorerBackend`; the
pipeline never cares whether calls stay in-process (mock, cache wrapper)
or cross the wire.  :func:`build_backend` turns an endpoint URL into a
backend: ``http(s)://`` gives an HTTP client, ``mock://<path>`` loads a
deterministic in-process mock from its config file.
"""

from __future__ import annotations

import abc
import time

import httpx

from ddselect.protocol import codec
from ddselect.protocol.errors import (
    BackendUnreachableError,
    ContextWindowError,
    EmptyTargetError,
    ProtocolError,
    ScorerError,
)
from ddselect.protocol.types import GenParams, ModelInfo, TokenScoreRecord


class ScorerBackend(abc.ABC):
    """The four scoring operations every backend provides.

    Implementations must be safe for concurrent use by multiple workers.
    """

    @abc.abstractmethod
    def score_target(self, context: str, target: str, want_attention: bool = False) -> TokenScoreRecord:
        """Natural-log probabilities of the target tokens given context."""

    @abc.abstractmethod
    def generate(self, prompt: str, params: GenParams) -> str:
        """Greedy completion of the prompt, truncated at stop/max tokens."""

    @abc.abstractmethod
    def embed(self, text: str) -> list[float]:
        """Deterministic embedding vector of length embedding_dim."""

    @abc.abstractmethod
    def model_info(self) -> ModelInfo:
        """Stable identity of the model behind this backend."""


_ERROR_CODES = {
    ContextWindowError.code: ContextWindowError,
    EmptyTargetError.code: EmptyTargetError,
    BackendUnreachableError.code: BackendUnreachableError,
}


class HttpScorerClient(ScorerBackend):
    """HTTP client for the scorer protocol.

    Retries unreachable-backend failures up to ``retries`` attempts with
    exponential backoff; all decoded responses are re-validated locally, so
    a misbehaving backend surfaces as :class:`ProtocolError` rather than
    bad numbers downstream.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.1,
        http_client: httpx.Client | None = None,
    ):
        self._client = http_client if http_client is not None else httpx.Client(base_url=base_url, timeout=timeout)
        self._retries = max(1, retries)
        self._backoff = backoff

    def close(self) -> None:
        self._client.close()

    def _raise_for_error(self, response: httpx.Response) -> None:
        if response.status_code < 400:
            return
        if response.status_code >= 500:
            raise BackendUnreachableError(f"backend returned HTTP {response.status_code}")
        try:
            payload = codec.decode(response.content)
            err = payload.get("error", {})
            code = err.get("code", "")
            message = err.get("message", response.text)
            details = err.get("details", {})
        except ProtocolError:
            raise ProtocolError(f"backend returned HTTP {response.status_code}: {response.text[:200]}")
        if code == ContextWindowError.code:
            raise ContextWindowError(
                message,
                context_tokens=int(details.get("context_tokens", 0)),
                target_tokens=int(details.get("target_tokens", 0)),
                window=int(details.get("window", 0)),
            )
        exc_type = _ERROR_CODES.get(code, ProtocolError)
        raise exc_type(message)

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self._retries):
            try:
                if method == "GET":
                    response = self._client.get(path)
                else:
                    response = self._client.post(
                        path,
                        content=codec.encode(body or {}),
                        headers={"content-type": "application/json"},
                    )
            except httpx.TransportError as exc:
                last_exc = BackendUnreachableError(f"backend unreachable: {exc}")
            else:
                try:
                    self._raise_for_error(response)
                except BackendUnreachableError as exc:
                    last_exc = exc
                else:
                    return codec.decode(response.content)
            if attempt + 1 < self._retries:
                time.sleep(self._backoff * (2**attempt))
        assert last_exc is not None
        raise last_exc

    def score_target(self, context: str, target: str, want_attention: bool = False) -> TokenScoreRecord:
        obj = self._request(
            "POST", "/v1/score", {"context": context, "target": target, "want_attention": want_attention}
        )
        return codec.score_record_from_wire(obj)

    def generate(self, prompt: str, params: GenParams) -> str:
        obj = self._request(
            "POST",
            "/v1/generate",
            {
                "prompt": prompt,
                "max_new_tokens": params.max_new_tokens,
                "stop": list(params.stop_sequences),
            },
        )
        return codec.generation_from_wire(obj)

    def embed(self, text: str) -> list[float]:
        obj = self._request("POST", "/v1/embed", {"text": text})
        return codec.embedding_from_wire(obj)

    def model_info(self) -> ModelInfo:
        return codec.model_info_from_wire(self._request("GET", "/v1/info"))


def build_backend(endpoint: str, retries: int = 3, timeout: float = 60.0) -> ScorerBackend:
    """Create a backend from an endpoint URL (``http(s)://`` or ``mock://``)."""
    if endpoint.startswith(("http://", "https://")):
        return HttpScorerClient(endpoint, timeout=timeout, retries=retries)
    if endpoint.startswith("mock://"):
        from ddselect.protocol.mock import MockBackend

        return MockBackend.from_config_file(endpoint[len("mock://") :])
    raise ScorerError(f"unsupported backend endpoint {endpoint!r} (use http://, https:// or mock://)")
