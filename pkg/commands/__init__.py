"""
GCSAM CLI commands

Each module registers a group of commands with the typer app through
`register_commands(app, runner_factory)`.
"""
from contextlib import contextmanager
from typing import Iterator, List, Optional

import typer
from pydantic import ValidationError

from gcsam import GcsamError, InvalidInputError, format_validation_error

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def parse_float_list(values_str: Optional[str], option: str) -> List[float]:
    """Parse comma-separated numbers."""
    if not values_str:
        return []
    try:
        return [float(v.strip()) for v in values_str.split(',') if v.strip()]
    except ValueError:
        typer.echo(f"[GCSAM] Error: {option} expects comma-separated numbers, got '{values_str}'", err=True)
        raise typer.Exit(EXIT_VALIDATION)


def parse_int_list(values_str: Optional[str], option: str) -> List[int]:
    """Parse comma-separated integers."""
    if not values_str:
        return []
    try:
        return [int(v.strip()) for v in values_str.split(',') if v.strip()]
    except ValueError:
        typer.echo(f"[GCSAM] Error: {option} expects comma-separated integers, got '{values_str}'", err=True)
        raise typer.Exit(EXIT_VALIDATION)


@contextmanager
def cli_errors() -> Iterator[None]:
    """Echo toolkit errors and exit 1 for bad input, 2 for runtime failures."""
    try:
        yield
    except ValidationError as exc:
        typer.echo(f"[GCSAM] Error: {format_validation_error(exc)}", err=True)
        raise typer.Exit(EXIT_VALIDATION)
    except InvalidInputError as exc:
        typer.echo(f"[GCSAM] Error: {exc}", err=True)
        raise typer.Exit(EXIT_VALIDATION)
    except GcsamError as exc:
        typer.echo(f"[GCSAM] Error: {exc}", err=True)
        raise typer.Exit(EXIT_RUNTIME)


__all__ = [
    "EXIT_OK",
    "EXIT_VALIDATION",
    "EXIT_RUNTIME",
    "parse_float_list",
    "parse_int_list",
    "cli_errors",
]
