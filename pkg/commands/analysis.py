"""
Analysis commands: landscape.
"""
from pathlib import Path
from typing import Optional

import typer

from experiment import load_run_config
from gcsam import GridAxes

from . import cli_errors


def register_commands(app: typer.Typer, runner_factory):
    """Register analysis commands with the typer app."""

    @app.command()
    def landscape(
        config: Path = typer.Option(..., "--config", help="Config the checkpoint was trained with"),
        checkpoint: Path = typer.Option(..., "--checkpoint", help="checkpoint.npz written by `run`"),
        seed: int = typer.Option(0, "--seed", min=0, help="Direction seed"),
        out: Optional[str] = typer.Option(None, "--out", help="Output directory (default: GCSAM_OUTPUT_DIR or runs)"),
        normalization: str = typer.Option("raw", "--normalization", help="raw or per_layer"),
        a_min: float = typer.Option(-1.0, "--a-min"),
        a_max: float = typer.Option(1.0, "--a-max"),
        a_steps: int = typer.Option(21, "--a-steps"),
        b_min: float = typer.Option(-1.0, "--b-min"),
        b_max: float = typer.Option(1.0, "--b-max"),
        b_steps: int = typer.Option(21, "--b-steps"),
    ):
        """Sample the training loss on a 2-D slice around a checkpoint and write landscape.csv."""
        with cli_errors():
            axes = GridAxes(a_min=a_min, a_max=a_max, a_steps=a_steps, b_min=b_min, b_max=b_max, b_steps=b_steps)
            run_config = load_run_config(config)
            runner = runner_factory(out, False)
            grid = runner.landscape(run_config, checkpoint, axes, seed=seed, normalization=normalization)

        typer.echo(f"[GCSAM] Center loss {grid.center_loss:.17g}", err=True)
        typer.echo(f"[GCSAM] Wrote {runner.out_root / 'landscape.csv'}", err=True)
