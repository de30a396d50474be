"""
Report models written by the harness, plus their CSV and text renderings.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .analysis import BoundEvaluation, GridAxes, SharpnessEstimate
from .config import RunConfig
from .data import Provenance
from .optim import TELEMETRY_COLUMNS, StepTelemetry

__all__ = [
    "REPORT_FORMAT_VERSION",
    "TIMING_FIELDS",
    "EpochRecord",
    "CentralizationStats",
    "RunReport",
    "write_telemetry_csv",
    "summarize_centralization",
    "ComparisonRow",
    "ComparisonReport",
    "GridCell",
    "GridSearchResult",
    "LandscapeExport",
]

REPORT_FORMAT_VERSION = 1

# Wall-clock fields; every other report field is reproducible from (config, seed).
TIMING_FIELDS = {"total_wall_s", "mean_step_ns", "relative_speed"}

_GC_SLACK = 1e-12


class EpochRecord(BaseModel):
    epoch: int
    steps: int
    train_loss: float
    train_accuracy: Optional[float] = None
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


class CentralizationStats(BaseModel):
    """Aggregates of the per-step ascent reports."""

    steps: int = 0
    violations: int = Field(default=0, description="Steps with gc_sq_norm > orig_sq_norm")
    max_ratio: Optional[float] = None
    mean_orig_sq_norm: Optional[float] = None
    mean_gc_sq_norm: Optional[float] = None
    mean_removed_sq_norm: Optional[float] = None
    ascent: bool = False
    descent: bool = False
    column_axis: int = 1
    min_rank: int = 2


class RunReport(BaseModel):
    format_version: Literal[1] = REPORT_FORMAT_VERSION
    run_id: str
    status: Literal["completed", "failed"]
    error: Optional[str] = None
    last_good_step: int
    config: RunConfig
    seeds: Dict[str, int]
    dataset: Provenance
    train_rows: int
    test_rows: int
    validation_rows: int = 0
    epochs: List[EpochRecord] = Field(default_factory=list)
    early_stopped: bool = False
    best_epoch: Optional[int] = None
    steps_executed: int
    oracle_calls: int
    oracle_calls_per_step: int
    final_train_loss: Optional[float] = None
    final_train_accuracy: Optional[float] = None
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    sharpness: Optional[SharpnessEstimate] = None
    bound: Optional[BoundEvaluation] = None
    centralization: CentralizationStats
    param_digest: str
    param_count: int
    environment: Dict[str, str] = Field(default_factory=dict)
    total_wall_s: float
    mean_step_ns: Optional[float] = None
    relative_speed: Optional[float] = None
    baseline_run_id: Optional[str] = None

    def deterministic_view(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=TIMING_FIELDS)


def write_telemetry_csv(path: Union[str, Path], telemetry: Sequence[StepTelemetry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([t.csv_row() for t in telemetry], columns=TELEMETRY_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def summarize_centralization(
    telemetry: Sequence[StepTelemetry],
    ascent: bool,
    descent: bool,
    column_axis: int,
    min_rank: int,
) -> CentralizationStats:
    stats = CentralizationStats(ascent=ascent, descent=descent, column_axis=column_axis, min_rank=min_rank)
    if not telemetry:
        return stats
    orig = np.array([t.orig_sq_norm for t in telemetry])
    gc = np.array([t.gc_sq_norm for t in telemetry])
    removed = np.array([t.ascent.removed_sq_norm if t.ascent is not None else 0.0 for t in telemetry])
    ratios = np.where(orig > 0, gc / np.where(orig > 0, orig, 1.0), 1.0)
    stats.steps = len(telemetry)
    stats.violations = int(np.sum(gc > orig * (1.0 + _GC_SLACK)))
    stats.max_ratio = float(ratios.max())
    stats.mean_orig_sq_norm = float(orig.mean())
    stats.mean_gc_sq_norm = float(gc.mean())
    stats.mean_removed_sq_norm = float(removed.mean())
    return stats


class ComparisonRow(BaseModel):
    name: str
    optimizer: str
    seeds: List[int]
    run_ids: List[str]
    failed_runs: int = 0
    accuracy_mean: Optional[float] = None
    accuracy_std: Optional[float] = None
    sharpness_mean: Optional[float] = None
    sharpness_std: Optional[float] = None
    speed_mean: Optional[float] = None
    speed_std: Optional[float] = None


def _fmt(mean: Optional[float], std: Optional[float], scale: float = 1.0, digits: int = 4) -> str:
    if mean is None:
        return "n/a"
    return f"{mean * scale:.{digits}f} ± {(std or 0.0) * scale:.{digits}f}"


class ComparisonReport(BaseModel):
    format_version: Literal[1] = REPORT_FORMAT_VERSION
    seeds: List[int]
    baseline: str = Field(description="Row whose speed is normalized to 1.00")
    rows: List[ComparisonRow]

    def to_table(self) -> str:
        header = ["optimizer", "test accuracy (%)", "sharpness", "speed", "failed"]
        body = [
            [
                row.name,
                _fmt(row.accuracy_mean, row.accuracy_std, scale=100.0, digits=2),
                _fmt(row.sharpness_mean, row.sharpness_std, digits=5),
                _fmt(row.speed_mean, row.speed_std, digits=2),
                str(row.failed_runs),
            ]
            for row in self.rows
        ]
        widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
        render = lambda line: "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()
        rule = "  ".join("-" * w for w in widths)
        return "\n".join([render(header), rule] + [render(line) for line in body])


class GridCell(BaseModel):
    lr: float
    rho: float
    optimizer: str
    seeds: List[int]
    run_ids: List[str] = Field(default_factory=list)
    status: Literal["completed", "failed"] = "completed"
    error: Optional[str] = None
    accuracies: List[float] = Field(default_factory=list)
    sharpness: List[float] = Field(default_factory=list)
    mean_accuracy: Optional[float] = None
    mean_sharpness: Optional[float] = None

    def selection_key(self):
        """Best first: higher accuracy, then lower sharpness, lower lr, lower rho."""
        sharp = self.mean_sharpness if self.mean_sharpness is not None else float("inf")
        return (-(self.mean_accuracy or 0.0), sharp, self.lr, self.rho)


class GridSearchResult(BaseModel):
    format_version: Literal[1] = REPORT_FORMAT_VERSION
    seeds: List[int]
    cells: List[GridCell]
    best: Optional[GridCell] = None
    best_config: Optional[RunConfig] = None

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "optimizer": c.optimizer,
                "lr": c.lr,
                "rho": c.rho,
                "status": c.status,
                "mean_accuracy": c.mean_accuracy,
                "mean_sharpness": c.mean_sharpness,
                "error": c.error or "",
            }
            for c in self.cells
        ]
        return pd.DataFrame(
            rows, columns=["optimizer", "lr", "rho", "status", "mean_accuracy", "mean_sharpness", "error"]
        )


class LandscapeExport(BaseModel):
    """Sidecar for `landscape.csv`."""

    format_version: Literal[1] = REPORT_FORMAT_VERSION
    checkpoint: str
    spec_hash: str
    axes: GridAxes
    seed: int
    normalization: Literal["raw", "per_layer"]
    center_loss: float
    failed_cells: int
    rows: int
