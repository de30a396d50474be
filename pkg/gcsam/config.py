"""
Experiment configuration: the versioned JSON document behind `gcsam run`.

Unknown keys are errors at every level. `load_config` turns JSON syntax
errors into line/column diagnostics and validation errors into dotted field
paths.
"""
import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, model_validator

from .data import Dataset, SplitSpec, gen_gaussian_blobs, gen_two_moons, load_csv
from .errors import ConfigError
from .models import MlpSpec
from .optim import (
    Adam,
    AdamConfig,
    OptimizerKind,
    SamConfig,
    Sgd,
    SgdConfig,
    TrainingOptimizer,
)

__all__ = [
    "CONFIG_VERSION",
    "TwoMoonsSource",
    "BlobsSource",
    "CsvSource",
    "DataConfig",
    "OptimizerConfig",
    "EarlyStopConfig",
    "SharpnessConfig",
    "BoundConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "format_validation_error",
    "with_seed",
    "with_optimizer",
    "config_digest",
    "build_dataset",
    "build_optimizer",
    "comparable_view",
]

CONFIG_VERSION = 1

_STRICT = {"extra": "forbid"}


class TwoMoonsSource(BaseModel):
    model_config = _STRICT

    kind: Literal["two_moons"] = "two_moons"
    n: int = Field(default=2000, ge=2)
    noise_sigma: float = Field(default=0.2, ge=0)
    seed: int = Field(default=0, ge=0)


class BlobsSource(BaseModel):
    model_config = _STRICT

    kind: Literal["gaussian_blobs"] = "gaussian_blobs"
    n: int = Field(default=500, ge=2)
    centers: List[List[float]] = Field(min_length=1)
    sigma: float = Field(default=1.0, ge=0)
    seed: int = Field(default=0, ge=0)


class CsvSource(BaseModel):
    model_config = _STRICT

    kind: Literal["csv"] = "csv"
    path: str
    label_column: str = "label"
    task: Literal["classification", "regression"] = "classification"


DataSource = Annotated[Union[TwoMoonsSource, BlobsSource, CsvSource], Field(discriminator="kind")]


class DataConfig(BaseModel):
    model_config = _STRICT

    source: DataSource
    split: SplitSpec = Field(default_factory=SplitSpec)


class OptimizerConfig(BaseModel):
    model_config = _STRICT

    kind: OptimizerKind = "adam"
    base: Literal["sgd", "adam"] = Field(default="adam", description="Base optimizer wrapped by sam/gcsam")
    sgd: SgdConfig = Field(default_factory=SgdConfig)
    adam: AdamConfig = Field(default_factory=AdamConfig)
    sam: SamConfig = Field(default_factory=SamConfig)

    @property
    def base_kind(self) -> Literal["sgd", "adam"]:
        return self.kind if self.kind in ("sgd", "adam") else self.base

    @property
    def lr(self) -> float:
        return self.sgd.lr if self.base_kind == "sgd" else self.adam.lr


class EarlyStopConfig(BaseModel):
    model_config = _STRICT

    patience: int = Field(default=5, ge=1, description="Epochs without improvement before stopping")
    metric: Literal["val_loss", "val_accuracy"] = "val_loss"
    validation_fraction: float = Field(default=0.1, gt=0, lt=1)


class SharpnessConfig(BaseModel):
    model_config = _STRICT

    enabled: bool = True
    rho: float = Field(default=0.05, gt=0)
    m: int = Field(default=32, ge=1)
    ascent_steps: int = Field(default=5, ge=0)
    min_radius: float = Field(default=0.01, gt=0, description="Smallest radius of the halving ladder")
    seed: Optional[int] = Field(default=None, ge=0, description="Defaults to the run seed")


class BoundConfig(BaseModel):
    model_config = _STRICT

    eta: float = Field(gt=0, description="Prior scale; no default on purpose")
    delta: float = Field(default=0.05, gt=0, lt=1)
    constant_term: float = 0.0


class RunConfig(BaseModel):
    model_config = _STRICT

    version: Literal[1]
    name: Optional[str] = None
    model: MlpSpec
    data: DataConfig
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    epochs: Optional[int] = Field(default=None, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=32, ge=1)
    shuffle: bool = True
    seed: int = Field(default=0, ge=0)
    early_stop: Optional[EarlyStopConfig] = None
    sharpness: SharpnessConfig = Field(default_factory=SharpnessConfig)
    bound: Optional[BoundConfig] = None

    @model_validator(mode="after")
    def _has_budget(self) -> "RunConfig":
        if self.epochs is None and self.max_steps is None:
            raise ValueError("set epochs, max_steps or both")
        return self

    @property
    def label(self) -> str:
        return self.name or self.optimizer.kind


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for error in exc.errors():
        path = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{path}: {error['msg']}")
    return "; ".join(lines)


def parse_config(data: Dict[str, Any], source: str = "<config>") -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {format_validation_error(exc)}") from exc


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data, str(path))


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Override the run seed and the init seed; the data seed is left alone."""
    model = config.model.model_copy(update={"seed": seed})
    return config.model_copy(update={"seed": seed, "model": model})


def with_optimizer(config: RunConfig, lr: Optional[float] = None, rho: Optional[float] = None) -> RunConfig:
    """Copy of `config` with the base learning rate and/or SAM radius replaced."""
    opt = config.optimizer
    updates: Dict[str, Any] = {}
    if lr is not None:
        if opt.base_kind == "sgd":
            updates["sgd"] = opt.sgd.model_copy(update={"lr": lr})
        else:
            updates["adam"] = opt.adam.model_copy(update={"lr": lr})
    if rho is not None:
        updates["sam"] = opt.sam.model_copy(update={"rho": rho})
    return config.model_copy(update={"optimizer": opt.model_copy(update=updates)})


def config_digest(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def comparable_view(config: RunConfig) -> Dict[str, Any]:
    """Everything except optimizer, name and seeds; compared runs must agree on it."""
    return config.model_dump(mode="json", exclude={"optimizer": True, "name": True, "seed": True, "model": {"seed"}})


def build_dataset(data: DataConfig, base_dir: Optional[Path] = None) -> Dataset:
    source = data.source
    if isinstance(source, TwoMoonsSource):
        return gen_two_moons(source.n, source.noise_sigma, source.seed)
    if isinstance(source, BlobsSource):
        return gen_gaussian_blobs(source.n, source.centers, source.sigma, source.seed)
    path = Path(source.path)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_csv(path, source.label_column, source.task)


def build_optimizer(cfg: OptimizerConfig) -> TrainingOptimizer:
    base = Sgd(cfg.sgd) if cfg.base_kind == "sgd" else Adam(cfg.adam)
    return TrainingOptimizer(cfg.kind, base, cfg.sam if cfg.kind in ("sam", "gcsam") else None)
