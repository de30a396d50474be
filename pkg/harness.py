from experiment import ExperimentRunner
import logging
import os
import typer
from typing import Optional

from dotenv import load_dotenv
load_dotenv()
# Also load .env.secrets if present
load_dotenv('.env.secrets')

# Command groups and the commands each registers
ALL_COMMANDS = {
    'training': ['run', 'compare', 'grid-search'],
    'analysis': ['landscape'],
    'verify': ['verify'],
}

LOG_FORMAT = "[GCSAM] %(levelname)s %(name)s: %(message)s"

app = typer.Typer(
    name="gcsam",
    help="GCSAM toolkit - seeded SAM/GCSAM training runs, comparisons, landscapes and property checks",
    add_completion=False,
    no_args_is_help=True,
)


def configure_logging(level: Optional[str] = None) -> None:
    """Install the stderr handler once; GCSAM_LOG_LEVEL is the default level."""
    name = (level or os.getenv("GCSAM_LOG_LEVEL") or "WARNING").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        typer.echo(f"[GCSAM] Warning: Unknown log level '{name}', using WARNING", err=True)
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)


def env_workers() -> int:
    raw = os.getenv("GCSAM_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        typer.echo(f"[GCSAM] Error: GCSAM_WORKERS must be an integer, got '{raw}'", err=True)
        raise typer.Exit(1)
    if workers < 1:
        typer.echo(f"[GCSAM] Error: GCSAM_WORKERS must be >= 1, got {workers}", err=True)
        raise typer.Exit(1)
    return workers


def build_runner(out: Optional[str] = None, timing_isolated: bool = False) -> ExperimentRunner:
    """Runner for one command; `--out` beats GCSAM_OUTPUT_DIR beats `runs`."""
    out_root = out or os.getenv("GCSAM_OUTPUT_DIR") or "runs"
    return ExperimentRunner(out_root, workers=env_workers(), timing_isolated=timing_isolated)


def register_all_commands(app: typer.Typer, runner_factory=build_runner) -> None:
    """Register every command group with the typer app."""
    from commands import analysis, training, verify

    training.register_commands(app, runner_factory)
    analysis.register_commands(app, runner_factory)
    verify.register_commands(app, runner_factory)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(
        None,
        "--log-level",
        help="Logging level (default: GCSAM_LOG_LEVEL or WARNING)"
    ),
):
    """Configure logging before any command runs."""
    configure_logging(log_level)


register_all_commands(app)


if __name__ == "__main__":
    app()
