"""Command-line entry point: ``mbec run``, ``mbec verify``, ``mbec summarize``."""
from __future__ import annotations

import json
import logging
import sys

import click

from .config import ConfigError, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Episodic-control experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output", "-o", default=None, help="Result directory (default: under $MBEC_OUTPUT_ROOT).")
@click.option("--workers", "-j", type=int, default=None, help="Parallel seed workers.")
def run(config: str, output: str | None, workers: int | None) -> None:
    """Run every seed of CONFIG and write logs, summary and manifest."""
    from .runner import run_experiment

    try:
        cfg = load_config(config)
    except ConfigError as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    try:
        out = run_experiment(cfg, output, workers)
    except Exception as exc:  # partial logs and an incomplete manifest are already on disk
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(str(out))


@main.command()
@click.option("--output", "-o", default="verify", help="Directory for report.json and oracle CSVs.")
@click.option("--quick", is_flag=True, help="Fewer writes and MDPs; for smoke testing.")
def verify(output: str, quick: bool) -> None:
    """Run the convergence and bound oracles; exit 1 if any fails."""
    from ..oracles import verify as run_oracles

    report = run_oracles(output, quick=quick)
    click.echo(json.dumps({k: v["passed"] for k, v in report.items() if isinstance(v, dict)}, indent=2))
    sys.exit(EXIT_OK if report["passed"] else EXIT_RUNTIME)


@main.command()
@click.argument("result_dir", type=click.Path(file_okay=False))
def summarize(result_dir: str) -> None:
    """Recompute scores from the CSV logs in RESULT_DIR and print them as JSON."""
    from .runner import summarize as summarize_dir

    try:
        summary = summarize_dir(result_dir)
    except (FileNotFoundError, ValueError) as exc:
        click.echo(f"cannot summarize: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
