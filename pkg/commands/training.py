"""
Training commands: run, compare and grid-search.
"""
from pathlib import Path
from typing import List, Optional

import typer

from experiment import load_run_config
from gcsam import with_seed

from . import EXIT_RUNTIME, cli_errors, parse_float_list, parse_int_list


def register_commands(app: typer.Typer, runner_factory):
    """Register training commands with the typer app."""

    @app.command()
    def run(
        config: Path = typer.Option(..., "--config", help="Experiment config (JSON, version 1)"),
        seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Override the run and init seed"),
        out: Optional[str] = typer.Option(None, "--out", help="Output root (default: GCSAM_OUTPUT_DIR or runs)"),
        baseline: Optional[str] = typer.Option(
            None, "--baseline", help="Run id under the output root to normalize step time against"
        ),
        timing_isolated: bool = typer.Option(False, "--timing-isolated", help="Never co-schedule runs"),
    ):
        """
        Train one model and write report.json, steps.csv and checkpoint.npz.

        Prints the report JSON on stdout. Exits 2 when the run is marked failed.
        """
        with cli_errors():
            run_config = load_run_config(config)
            if seed is not None:
                run_config = with_seed(run_config, seed)
            runner = runner_factory(out, timing_isolated)
            report = runner.run(run_config, baseline=baseline)

        typer.echo(report.model_dump_json(indent=2))
        typer.echo(f"[GCSAM] Wrote {runner.out_root / report.run_id}", err=True)
        if report.status == "failed":
            typer.echo(f"[GCSAM] Error: run failed at step {report.last_good_step}: {report.error}", err=True)
            raise typer.Exit(EXIT_RUNTIME)

    @app.command()
    def compare(
        configs: List[Path] = typer.Option(..., "--config", help="Repeat once per optimizer; the first is the baseline"),
        seeds: str = typer.Option("0", "--seeds", help="Comma-separated seeds shared by every config"),
        out: Optional[str] = typer.Option(None, "--out", help="Output root (default: GCSAM_OUTPUT_DIR or runs)"),
        timing_isolated: bool = typer.Option(False, "--timing-isolated", help="Run one job at a time"),
    ):
        """
        Run configs that differ only in their optimizer over shared seeds and
        print mean ± std of test accuracy, sharpness and relative speed.
        """
        seed_list = parse_int_list(seeds, "--seeds")
        with cli_errors():
            run_configs = [load_run_config(path) for path in configs]
            runner = runner_factory(out, timing_isolated)
            result = runner.compare(run_configs, seed_list)

        typer.echo(result.to_table())
        typer.echo(f"[GCSAM] Wrote {runner.out_root / 'comparison.json'}", err=True)

    @app.command("grid-search")
    def grid_search(
        config: Path = typer.Option(..., "--config", help="Template experiment config"),
        lrs: str = typer.Option(..., "--lrs", help="Comma-separated learning rates"),
        rhos: Optional[str] = typer.Option(
            None, "--rhos", help="Comma-separated SAM radii (default: the template's rho)"
        ),
        seeds: str = typer.Option("0", "--seeds", help="Comma-separated seeds evaluated in every cell"),
        out: Optional[str] = typer.Option(None, "--out", help="Output root (default: GCSAM_OUTPUT_DIR or runs)"),
        timing_isolated: bool = typer.Option(False, "--timing-isolated", help="Run one job at a time"),
    ):
        """Grid search over learning rate and rho; failed cells are recorded, not fatal."""
        lr_list = parse_float_list(lrs, "--lrs")
        rho_list = parse_float_list(rhos, "--rhos")
        seed_list = parse_int_list(seeds, "--seeds")
        with cli_errors():
            template = load_run_config(config)
            if not rho_list:
                rho_list = [template.optimizer.sam.rho]
            runner = runner_factory(out, timing_isolated)
            result = runner.grid_search(template, lr_list, rho_list, seed_list)

        typer.echo(result.to_frame().to_string(index=False))
        if result.best is None:
            typer.echo("[GCSAM] Error: every grid cell failed", err=True)
            raise typer.Exit(EXIT_RUNTIME)
        typer.echo(
            f"[GCSAM] Best cell: lr={result.best.lr:g} rho={result.best.rho:g} "
            f"accuracy={result.best.mean_accuracy}",
            err=True,
        )
        typer.echo(f"[GCSAM] Wrote {runner.out_root / 'grid_search.json'}", err=True)
