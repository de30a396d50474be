"""
Property-suite command.
"""
from typing import Optional

import typer

from gcsam.verification import SUITES, run_suites

from . import EXIT_RUNTIME, cli_errors


def _parse_suite_list(suites_str: Optional[str]) -> list:
    if not suites_str:
        return []
    return [s.strip() for s in suites_str.split(',') if s.strip()]


def register_commands(app: typer.Typer, runner_factory):
    """Register the verify command with the typer app."""

    @app.command()
    def verify(
        quick: bool = typer.Option(False, "--quick", help="Shrink the random corpora"),
        suites: Optional[str] = typer.Option(
            None, "--suites", help=f"Comma-separated subset of: {', '.join(SUITES)}"
        ),
    ):
        """Run the property suites; exits 2 if any fails."""
        with cli_errors():
            results = run_suites(quick=quick, names=_parse_suite_list(suites) or None)

        for result in results:
            status = "PASS" if result.passed else "FAIL"
            typer.echo(f"{status}  {result.name:<24} {result.seconds:7.2f}s  {result.detail}")
        failed = [r.name for r in results if not r.passed]
        typer.echo(f"\n{len(results) - len(failed)}/{len(results)} suites passed")
        if failed:
            typer.echo(f"[GCSAM] Error: failed suites: {', '.join(failed)}", err=True)
            raise typer.Exit(EXIT_RUNTIME)
