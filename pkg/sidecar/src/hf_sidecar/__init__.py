"""Transformers checkpoint adapter for the token-scorer wire protocol."""

__version__ = "0.1.0"

from hf_sidecar.backend import HFScorerBackend
from hf_sidecar.config import SidecarConfig, load_sidecar_config

__all__ = ["HFScorerBackend", "SidecarConfig", "load_sidecar_config"]
