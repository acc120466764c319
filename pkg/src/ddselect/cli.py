"""Operator CLI: run / sweep / score / report / mock-serve.

Exit codes are stable: 0 success, 2 configuration problems, 3 backend
unreachable, 4 empty selection, 1 anything else.  Success paths print to
stdout only.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click

from ddselect import __version__
from ddselect.config import ENV_BACKEND_URL, FIELD_DOCS, ConfigError, PipelineConfig, load_config
from ddselect.corpus import CorpusError
from ddselect.pipeline import EmptySelectionError, PipelineError
from ddselect.pipeline import run as pipeline_run
from ddselect.pipeline import score_only, sweep as pipeline_sweep
from ddselect.protocol.errors import BackendUnreachableError, MockConfigError
from ddselect.report import DifficultySnapshot, ReportError, domain_shift, write_plot_data, write_shift_report

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_EMPTY = 4


def _config_field_help() -> str:
    lines = ["Config fields (file keys / --set paths) and defaults:"]
    for f in dataclasses.fields(PipelineConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()  # type: ignore[misc]
        lines.append(f"  {f.name} = {default!r}  {FIELD_DOCS.get(f.name, '')}")
    lines.append(f"Environment: {ENV_BACKEND_URL} overrides backend_url.")
    return "\n".join(lines)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _handle(exc: Exception) -> None:
    if isinstance(exc, (ConfigError, CorpusError, MockConfigError)):
        _fail(EXIT_CONFIG, str(exc))
    if isinstance(exc, BackendUnreachableError):
        _fail(EXIT_BACKEND, str(exc))
    if isinstance(exc, EmptySelectionError):
        detail = f" (distributions: {exc.distributions})" if exc.distributions else ""
        _fail(EXIT_EMPTY, str(exc) + detail)
    if isinstance(exc, PipelineError):
        _fail(exc.exit_code, str(exc))
    raise exc


def _pipeline_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")(fn)
    fn = click.option(
        "--set",
        "sets",
        multiple=True,
        metavar="FIELD=VALUE",
        help="Override a config field (repeatable).",
    )(fn)
    fn = click.option("--cache-dir", default=None, help="Override the score-cache directory.")(fn)
    fn = click.option("--concurrency", type=int, default=None, help="Override max in-flight requests.")(fn)
    return fn


def _build_config(config_path: str | None, sets: tuple[str, ...], cache_dir: str | None, concurrency: int | None) -> PipelineConfig:
    overrides: dict[str, str] = {}
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects FIELD=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if cache_dir is not None:
        overrides["cache_dir"] = cache_dir
    if concurrency is not None:
        overrides["concurrency"] = str(concurrency)
    return load_config(config_path, overrides)


@click.group()
@click.version_option(version=__version__, prog_name="ddselect")
def cli() -> None:
    """Two-stage training-data selection driven by a token-scoring backend."""


@cli.command(epilog=_config_field_help())
@_pipeline_options
def run(config_path, sets, cache_dir, concurrency) -> None:
    """Run both selection stages and write the manifest."""
    try:
        config = _build_config(config_path, sets, cache_dir, concurrency)
        manifest = pipeline_run(config)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        _handle(exc)
        return
    manifest_path = Path(config.output_dir) / "manifest.json"
    click.echo(f"manifest: {manifest_path}")
    click.echo(f"manifest_hash: {manifest.manifest_hash()}")
    click.echo(f"selected: {manifest.counts.final} of {manifest.counts.loaded} loaded")


@cli.command(epilog=_config_field_help())
@_pipeline_options
@click.option("--sigma", "sigmas", multiple=True, type=float, help="Difficulty-window center (repeatable).")
def sweep(config_path, sets, cache_dir, concurrency, sigmas) -> None:
    """Run one stage-2 selection per sigma window, sharing cached scores."""
    try:
        if not sigmas:
            raise ConfigError("sweep needs at least one --sigma")
        config = _build_config(config_path, sets, cache_dir, concurrency)
        results = pipeline_sweep(config, list(sigmas))
    except Exception as exc:  # noqa: BLE001
        _handle(exc)
        return
    for sigma, manifest in results:
        click.echo(
            f"sigma={sigma:g} band=({max(0.0, sigma - 25):g},{min(100.0, sigma + 25):g}) "
            f"s_mid={manifest.counts.s_mid} final={manifest.counts.final}"
        )
    click.echo(f"summary: {Path(config.output_dir) / 'sweep_summary.jsonl'}")


@cli.command(epilog=_config_field_help())
@_pipeline_options
def score(config_path, sets, cache_dir, concurrency) -> None:
    """Compute and cache difficulties without selecting."""
    try:
        config = _build_config(config_path, sets, cache_dir, concurrency)
        table = score_only(config)
    except Exception as exc:  # noqa: BLE001
        _handle(exc)
        return
    click.echo(f"difficulty table: {table}")


@cli.command()
@click.argument("before_table", type=click.Path())
@click.argument("after_table", type=click.Path())
@click.option("--before-model", default="before", help="Model id label for the first snapshot.")
@click.option("--after-model", default="after", help="Model id label for the second snapshot.")
@click.option("--output-dir", default="report_out", help="Where to write the report files.")
def report(before_table, after_table, before_model, after_model, output_dir) -> None:
    """Compare two difficulty snapshots of the same probe set."""
    try:
        before = DifficultySnapshot.from_table_file(before_table, model_id=before_model)
        after = DifficultySnapshot.from_table_file(after_table, model_id=after_model)
        shift = domain_shift(before, after)
    except ReportError as exc:
        _fail(EXIT_CONFIG, str(exc))
        return
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_shift_report(shift, out / "shift_report.json")
    write_plot_data([("before", before), ("after", after)], out / "plot_data.jsonl")
    for metric, m in shift.metrics.items():
        click.echo(
            f"{metric}: mean_delta={m.mean_delta:+.6g} median_delta={m.median_delta:+.6g} "
            f"frac_decreased={m.frac_decreased:.3f} iqr {m.iqr_before:.6g} -> {m.iqr_after:.6g}"
        )
    click.echo(f"report: {out / 'shift_report.json'}")
    click.echo(f"plot data: {out / 'plot_data.jsonl'}")


@cli.command("mock-serve")
@click.option("--mock-config", "mock_config", required=True, type=click.Path(), help="Mock backend config (YAML).")
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--port", default=8777, type=int, help="Bind port.")
def mock_serve(mock_config, host, port) -> None:
    """Host the deterministic mock backend over the wire protocol."""
    import uvicorn

    from ddselect.protocol.mock import MockBackend
    from ddselect.protocol.service import create_app

    try:
        backend = MockBackend.from_config_file(mock_config)
    except MockConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
        return
    uvicorn.run(create_app(backend), host=host, port=port, log_level="warning")


def main() -> None:
    cli(prog_name="ddselect")


if __name__ == "__main__":
    main()
