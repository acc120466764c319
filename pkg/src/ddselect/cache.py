"""Content-addressed, checksummed score cache.

Every raw backend response (score record, generation, embedding) is stored
under a sha256 key derived from the model identity plus the full request
content, so a cache hit replays the original backend result byte for byte
and any change to prompts, templates, or generation parameters lands on a
fresh key.  One file per entry under a two-level hex fan-out; each file is
a checksum header line followed by the payload.  Corrupt entries read as
misses (and are re-fetched and overwritten by the wrapper).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

from ddselect.protocol import codec
from ddselect.protocol.client import ScorerBackend
from ddselect.protocol.types import GenParams, ModelInfo, TokenScoreRecord

_HEADER_PREFIX = b"sha256:"


def request_key(model_id: str, op: str, request: dict[str, Any]) -> str:
    """64-hex cache key over (model identity, operation, request content)."""
    payload = json.dumps(
        {"model_id": model_id, "op": op, "request": request},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScoreCache:
    """Durable key -> payload store with per-entry checksums."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.corrupt_entries = 0

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / key[2:4] / f"{key}.rec"

    def get(self, key: str) -> bytes | None:
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except OSError:
            with self._lock:
                self.misses += 1
            return None
        newline = blob.find(b"\n")
        header, payload = blob[:newline], blob[newline + 1 :]
        if (
            newline < 0
            or not header.startswith(_HEADER_PREFIX)
            or header[len(_HEADER_PREFIX) :].decode("ascii", "replace") != hashlib.sha256(payload).hexdigest()
        ):
            with self._lock:
                self.corrupt_entries += 1
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return payload

    def put(self, key: str, payload: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = _HEADER_PREFIX + hashlib.sha256(payload).hexdigest().encode("ascii") + b"\n" + payload
        # Atomic replace keeps concurrent writers of the same key safe:
        # content is identical by construction, last writer wins.
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    # --- persisted backend identity -------------------------------------

    def load_model_info(self) -> ModelInfo | None:
        path = self.root / "model_info.json"
        if not path.is_file():
            return None
        return codec.model_info_from_wire(codec.decode(path.read_bytes()))

    def save_model_info(self, info: ModelInfo) -> None:
        (self.root / "model_info.json").write_bytes(codec.encode(codec.model_info_to_wire(info)))


class CachingBackend(ScorerBackend):
    """Consults the cache before delegating to the wrapped backend.

    The cache directory is bound to one backend identity: the model id is
    fetched once (or read back from the cache's persisted copy), so a fully
    warm run issues no backend calls at all.
    """

    def __init__(self, backend: ScorerBackend, cache: ScoreCache):
        self._backend = backend
        self._cache = cache
        self._info: ModelInfo | None = None
        self._info_lock = threading.Lock()

    def model_info(self) -> ModelInfo:
        # Locked so concurrent workers cannot race duplicate info fetches.
        with self._info_lock:
            if self._info is None:
                stored = self._cache.load_model_info()
                if stored is None:
                    stored = self._backend.model_info()
                    self._cache.save_model_info(stored)
                self._info = stored
            return self._info

    def _cached(self, op: str, request: dict[str, Any], fetch) -> dict[str, Any]:
        key = request_key(self.model_info().model_id, op, request)
        payload = self._cache.get(key)
        if payload is not None:
            return codec.decode(payload)
        wire = fetch()
        self._cache.put(key, codec.encode(wire))
        return wire

    def score_target(self, context: str, target: str, want_attention: bool = False) -> TokenScoreRecord:
        request = {"context": context, "target": target, "want_attention": want_attention}
        wire = self._cached(
            "score",
            request,
            lambda: codec.score_record_to_wire(self._backend.score_target(context, target, want_attention)),
        )
        return codec.score_record_from_wire(wire)

    def generate(self, prompt: str, params: GenParams) -> str:
        request = {
            "prompt": prompt,
            "max_new_tokens": params.max_new_tokens,
            "decoding": params.decoding,
            "stop": list(params.stop_sequences),
        }
        wire = self._cached("generate", request, lambda: {"text": self._backend.generate(prompt, params)})
        return codec.generation_from_wire(wire)

    def embed(self, text: str) -> list[float]:
        wire = self._cached("embed", {"text": text}, lambda: {"embedding": self._backend.embed(text)})
        return codec.embedding_from_wire(wire)
