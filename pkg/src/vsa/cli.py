"""Command-line interface: one-shot queries, the HTTP service, trace replay,
and the evaluation harness."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .config import ConfigError, ensure_trace_dir, load_config
from .evalharness import MEDIA_TYPE_BY_SUFFIX, ModeComparison, format_comparison, load_suite, run_suite
from .model import ImagePayload, QueryMode, UserQuery
from .pipeline import (
    PipelineError,
    QueryAborted,
    deps_from_config,
    deterministic_query_id,
    run_query,
)
from .report import graph_figures, replay_transcript, write_eval_outputs
from .trace import TraceCodecError, TraceRecorder, decode_trace

MODE_CHOICES = [m.value for m in QueryMode]


def _load_image(path: Path) -> ImagePayload:
    media_type = MEDIA_TYPE_BY_SUFFIX.get(path.suffix.lower())
    if media_type is None:
        raise click.ClickException(f"unsupported image type: {path.name} (png/jpeg/webp)")
    return ImagePayload(path.read_bytes(), media_type)


def _build_deps(config_path: Path | None, fixtures: Path | None):
    try:
        config = load_config(config_path)
        if fixtures is not None:
            config.fixtures_dir = str(fixtures)
        return config, deps_from_config(config)
    except (ConfigError, PipelineError) as exc:
        raise click.ClickException(str(exc)) from exc


@click.group()
@click.version_option(package_name="vsa")
def main() -> None:
    """Vision Search Assistant: web-grounded answers about images."""


@main.command()
@click.option("--image", "image_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--prompt", required=True, help="The question to answer about the image.")
@click.option("--mode", type=click.Choice(MODE_CHOICES), default=QueryMode.FULL.value)
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Fixture pack directory; runs fully offline against scripted backends.")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--trace-dir", type=click.Path(path_type=Path),
              help="Directory for the trace file (default from config).")
def ask(image_path: Path, prompt: str, mode: str, fixtures: Path | None,
        config_path: Path | None, trace_dir: Path | None) -> None:
    """Answer one question about one image and write the run's trace."""
    config, deps = _build_deps(config_path, fixtures)
    if trace_dir is not None:
        config.trace_dir = str(trace_dir)
    out_dir = ensure_trace_dir(config)

    image = _load_image(image_path)
    # Deterministic id: the same inputs always produce the same trace file.
    digest = deterministic_query_id(image, prompt, QueryMode(mode))
    query = UserQuery(digest, image, prompt, QueryMode(mode))
    recorder = TraceRecorder(out_dir / f"{digest}.jsonl")
    try:
        answer = run_query(query, deps, recorder)
    except QueryAborted:
        raise click.ClickException("query aborted before any knowledge level") from None
    except PipelineError as exc:
        click.echo(f"trace: {recorder.path}", err=True)
        raise click.ClickException(str(exc)) from exc

    click.echo(answer.text)
    if answer.citations:
        click.echo("\nSources:")
        for url, _node in answer.citations:
            click.echo(f"- {url}")
    click.echo(f"\ntrace: {recorder.path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--host", default=None, help="Override listen host.")
@click.option("--port", default=None, type=int, help="Override listen port.")
def serve(config_path: Path | None, host: str | None, port: int | None) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    try:
        config = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    app = create_app(config)
    uvicorn.run(app, host=host or config.listen_host, port=port or config.listen_port)


@main.command()
@click.argument("trace", type=click.Path(exists=True, path_type=Path))
@click.option("--figures", "figures_dir", type=click.Path(path_type=Path),
              help="Also render per-region search-graph figures into this directory.")
def replay(trace: Path, figures_dir: Path | None) -> None:
    """Render a persisted trace as a human-readable transcript."""
    try:
        events = decode_trace(trace.read_bytes())
    except TraceCodecError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(replay_transcript(events))
    if figures_dir is not None:
        for path in graph_figures(events, figures_dir):
            click.echo(f"figure: {path}", err=True)


@main.command()
@click.option("--suite", "suite_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", "modes", type=click.Choice(MODE_CHOICES), multiple=True,
              default=(QueryMode.FULL.value,), show_default=True,
              help="Repeat to compare modes; the first is the baseline.")
@click.option("--fixtures", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("eval-out"),
              show_default=True, help="Report output directory (JSON, text, CSV, figures).")
def eval(suite_path: Path, modes: tuple[str, ...], fixtures: Path | None,
         config_path: Path | None, out_dir: Path) -> None:
    """Run an evaluation suite and write score reports."""
    _config, deps = _build_deps(config_path, fixtures)
    try:
        cases = load_suite(suite_path)
        reports = [run_suite(cases, QueryMode(mode), deps) for mode in modes]
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc

    if len(reports) >= 2:
        click.echo(format_comparison(ModeComparison(reports)))
    else:
        report = reports[0]
        click.echo(f"mode={report.mode} overall={report.overall():.1f}")
    paths = write_eval_outputs(out_dir, reports)
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}", err=True)


if __name__ == "__main__":
    sys.exit(main())
