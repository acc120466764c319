"""Sidecar CLI: load a checkpoint and serve the scorer protocol."""

from __future__ import annotations

import sys

import click

from hf_sidecar import __version__
from hf_sidecar.config import SidecarConfig, SidecarConfigError, load_sidecar_config


@click.group()
@click.version_option(version=__version__, prog_name="hf-sidecar")
def cli() -> None:
    """Serve a transformers checkpoint over the token-scorer protocol."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Sidecar config (YAML).")
@click.option("--checkpoint", default=None, help="Checkpoint path or name (overrides config).")
@click.option("--device", default=None, help="Device string, e.g. cpu or cuda:0.")
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", default=8777, type=int, help="Bind port.")
def serve(config_path, checkpoint, device, host, port) -> None:
    """Load the checkpoint and host /v1/score, /v1/generate, /v1/embed, /v1/info."""
    import uvicorn

    from hf_sidecar.backend import HFScorerBackend
    from hf_sidecar.service import create_app

    try:
        config = load_sidecar_config(config_path) if config_path else SidecarConfig()
        if checkpoint:
            config.checkpoint = checkpoint
        if device:
            config.device = device
        config.validate()
        backend = HFScorerBackend(config)
    except (SidecarConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    info = backend.info()
    click.echo(f"serving {info['model_id']} on http://{host}:{port} ({info['attention_layer_policy']})")
    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")


def main() -> None:
    cli(prog_name="hf-sidecar")


if __name__ == "__main__":
    main()
