"""Typed errors shared by scorer-protocol clients and backends."""

from __future__ import annotations


class ScorerError(Exception):
    """Base class for all scorer-protocol failures."""

    code = "scorer_error"
    retryable = False


class BackendUnreachableError(ScorerError):
    """Transport failure or backend-side crash; safe to retry."""

    code = "backend_unreachable"
    retryable = True


class ContextWindowError(ScorerError):
    """context + target exceed the backend window; not retryable."""

    code = "window_exceeded"

    def __init__(self, message: str, context_tokens: int, target_tokens: int, window: int):
        super().__init__(message)
        self.context_tokens = context_tokens
        self.target_tokens = target_tokens
        self.window = window


class EmptyTargetError(ScorerError):
    """Target text tokenized to zero tokens."""

    code = "empty_target"


class ProtocolError(ScorerError):
    """Malformed wire data or a request the backend cannot serve."""

    code = "protocol_error"


class MockConfigError(ScorerError):
    """Invalid mock-backend configuration (e.g. probabilities not summing to 1)."""

    code = "mock_config_error"
