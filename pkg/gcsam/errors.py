"""Exception hierarchy shared by every gcsam module.

The CLI maps InvalidInputError (and its subclasses) to exit code 1 and every
other GcsamError to exit code 2.
"""
from typing import Optional, Sequence, Tuple

__all__ = [
    "GcsamError",
    "ShapeError",
    "InvalidInputError",
    "NonFiniteGradientError",
    "IngestionError",
    "ConfigError",
    "CheckpointError",
    "ContractError",
    "EvaluationError",
    "StepAbortedError",
    "BoundDomainError",
]


class GcsamError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GcsamError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = ", ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible operand shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class InvalidInputError(GcsamError):
    """Input failed validation."""


class NonFiniteGradientError(InvalidInputError):
    """A gradient handed to an optimizer step contained NaN or Inf."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter '{name}'; step aborted")


class IngestionError(InvalidInputError):
    """A CSV file could not be turned into a Dataset."""

    def __init__(
        self,
        message: str,
        row: Optional[int] = None,
        column: Optional[int] = None,
        available: Optional[Sequence[str]] = None,
    ):
        self.row = row
        self.column = column
        self.available = list(available) if available is not None else None
        super().__init__(message)


class ConfigError(InvalidInputError):
    """An experiment configuration could not be parsed or validated."""


class CheckpointError(InvalidInputError):
    """A checkpoint is missing, malformed or incompatible with a model spec."""


class ContractError(GcsamError):
    """An API contract was violated by the caller."""


class EvaluationError(GcsamError):
    """A numerical evaluation produced a non-finite value."""

    def __init__(self, message: str, name: Optional[str] = None, index: Optional[Tuple[int, ...]] = None):
        self.name = name
        self.index = index
        super().__init__(message)


class StepAbortedError(GcsamError):
    """An optimizer step could not complete; parameters are unchanged."""


class BoundDomainError(GcsamError):
    """The generalization bound radicand is negative."""
