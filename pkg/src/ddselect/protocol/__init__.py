"""Scorer wire protocol: types, codec, client, mock backend, HTTP service."""

from ddselect.protocol.client import HttpScorerClient, ScorerBackend, build_backend
from ddselect.protocol.errors import (
    BackendUnreachableError,
    ContextWindowError,
    EmptyTargetError,
    MockConfigError,
    ProtocolError,
    ScorerError,
)
from ddselect.protocol.mock import MockBackend, MockConfig
from ddselect.protocol.types import AttentionBlock, GenParams, ModelInfo, TokenScoreRecord

__all__ = [
    "ScorerBackend",
    "HttpScorerClient",
    "build_backend",
    "MockBackend",
    "MockConfig",
    "AttentionBlock",
    "GenParams",
    "ModelInfo",
    "TokenScoreRecord",
    "ScorerError",
    "BackendUnreachableError",
    "ContextWindowError",
    "EmptyTargetError",
    "ProtocolError",
    "MockConfigError",
]
