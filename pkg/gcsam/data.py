"""
Datasets: seeded synthetic generators, CSV ingestion/export, train/test
splitting and minibatch iteration.

Generators draw from scikit-learn with an integer `random_state` (legacy
MT19937 stream). Batch order uses NumPy's PCG64 `default_rng` seeded with
(seed, epoch).
"""
import hashlib
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.datasets import make_blobs, make_moons
from sklearn.model_selection import train_test_split

from .errors import IngestionError, InvalidInputError

logger = logging.getLogger(__name__)

# Plain decimal literals only
_DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?", re.ASCII)

__all__ = [
    "Batch",
    "Provenance",
    "Dataset",
    "SplitSpec",
    "GENERATOR_RNG",
    "BATCH_RNG",
    "gen_two_moons",
    "gen_gaussian_blobs",
    "load_csv",
    "write_csv",
    "minibatches",
    "split_dataset",
]

GENERATOR_RNG = "MT19937 (numpy RandomState via scikit-learn random_state)"
BATCH_RNG = "PCG64 (numpy default_rng)"

Task = Literal["classification", "regression"]


class Batch(NamedTuple):
    features: np.ndarray
    labels: np.ndarray


class Provenance(BaseModel):
    source: Literal["generator", "csv"]
    name: str = Field(description="Generator name or file path")
    params: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    sha256: Optional[str] = None
    rng: Optional[str] = None


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: Provenance
    feature_names: Tuple[str, ...] = ()
    label_name: str = "label"
    task: Task = "classification"
    num_classes: Optional[int] = field(default=None)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise InvalidInputError(f"features must be a matrix, got shape {features.shape}")
        if self.task == "classification":
            labels = np.asarray(self.labels)
            if labels.dtype.kind == "f":
                if not np.all(labels == np.round(labels)):
                    raise InvalidInputError("classification labels must be integers")
            labels = np.array(labels, dtype=np.int64)
            if labels.size and labels.min() < 0:
                raise InvalidInputError("classification labels must be non-negative")
            num_classes = self.num_classes
            if num_classes is None:
                num_classes = int(labels.max()) + 1 if labels.size else 0
            elif labels.size and labels.max() >= num_classes:
                raise InvalidInputError(f"label {int(labels.max())} outside [0, {num_classes})")
            object.__setattr__(self, "num_classes", num_classes)
        else:
            labels = np.array(self.labels, dtype=np.float64)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InvalidInputError(
                f"{features.shape[0]} feature rows but labels have shape {labels.shape}"
            )
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(features.shape[1]))
        if len(names) != features.shape[1]:
            raise InvalidInputError(f"{len(names)} feature names for {features.shape[1]} columns")
        if self.label_name in names:
            raise InvalidInputError(f"label column '{self.label_name}' collides with a feature name")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            provenance=self.provenance,
            feature_names=self.feature_names,
            label_name=self.label_name,
            task=self.task,
            num_classes=self.num_classes,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.label_name == other.label_name
            and self.task == other.task
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and self.labels.dtype == other.labels.dtype
            and self.labels.tobytes() == other.labels.tobytes()
        )


class SplitSpec(BaseModel):
    model_config = {"extra": "forbid"}

    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: int = Field(default=0, ge=0)


def _sklearn_seed(seed: int) -> int:
    if seed < 0:
        raise InvalidInputError(f"seed must be non-negative, got {seed}")
    return seed % (2 ** 32)


def _check_size(n: int, noise_sigma: float) -> None:
    if n < 2:
        raise InvalidInputError(f"need at least 2 samples, got {n}")
    if not noise_sigma >= 0:
        raise InvalidInputError(f"noise sigma must be non-negative, got {noise_sigma}")


def gen_two_moons(n: int, noise_sigma: float, seed: int) -> Dataset:
    """Two interleaving half circles; class 0 is the upper unit arc."""
    _check_size(n, noise_sigma)
    features, labels = make_moons(
        n_samples=n,
        shuffle=True,
        noise=noise_sigma if noise_sigma > 0 else None,
        random_state=_sklearn_seed(seed),
    )
    return Dataset(
        features=features,
        labels=labels,
        provenance=Provenance(
            source="generator",
            name="two_moons",
            params={"n": n, "noise_sigma": noise_sigma},
            seed=seed,
            rng=GENERATOR_RNG,
        ),
        feature_names=("x0", "x1"),
        num_classes=2,
    )


def gen_gaussian_blobs(n: int, centers: Sequence[Sequence[float]], sigma: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters, one class per center, sizes within one of each other."""
    _check_size(n, sigma)
    centers_arr = np.asarray(centers, dtype=np.float64)
    if centers_arr.ndim != 2 or centers_arr.shape[0] < 1 or centers_arr.shape[1] < 1:
        raise InvalidInputError(f"centers must be a non-empty k x d matrix, got shape {centers_arr.shape}")
    if centers_arr.shape[0] > n:
        raise InvalidInputError(f"{centers_arr.shape[0]} centers need at least as many samples, got {n}")
    features, labels = make_blobs(
        n_samples=n,
        centers=centers_arr,
        cluster_std=sigma,
        shuffle=True,
        random_state=_sklearn_seed(seed),
    )
    return Dataset(
        features=features,
        labels=labels,
        provenance=Provenance(
            source="generator",
            name="gaussian_blobs",
            params={"n": n, "centers": centers_arr.tolist(), "sigma": sigma},
            seed=seed,
            rng=GENERATOR_RNG,
        ),
        num_classes=centers_arr.shape[0],
    )


def _parse_cell(cell: str, row: int, column: int, name: str) -> float:
    if not _DECIMAL.fullmatch(cell):
        raise IngestionError(
            f"non-numeric cell {cell!r} at row {row}, column {column} ('{name}')", row=row, column=column
        )
    value = float(cell)
    if not np.isfinite(value):
        raise IngestionError(
            f"non-finite cell {cell!r} at row {row}, column {column} ('{name}')", row=row, column=column
        )
    return value


def load_csv(path: Union[str, Path], label_column: str, task: Task = "classification") -> Dataset:
    """
    Read a comma-separated UTF-8 file with a header row. Every column other
    than `label_column` is a feature. Row order is preserved; rows and
    columns in error messages are 0-based data-row and file-column indices.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"CSV file not found: {path}")
    raw = path.read_bytes()
    try:
        frame = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc

    columns: List[str] = [str(c) for c in frame.columns]
    if label_column not in columns:
        raise IngestionError(
            f"label column '{label_column}' not found; available columns: {', '.join(columns)}",
            available=columns,
        )
    feature_columns = [c for c in columns if c != label_column]
    if not feature_columns:
        raise IngestionError(f"{path} has no feature columns besides '{label_column}'")

    rows = len(frame)
    features = np.empty((rows, len(feature_columns)), dtype=np.float64)
    for j, name in enumerate(feature_columns):
        col_index = columns.index(name)
        for i, cell in enumerate(frame[name].tolist()):
            features[i, j] = _parse_cell(cell, i, col_index, name)

    label_index = columns.index(label_column)
    label_values = [_parse_cell(cell, i, label_index, label_column) for i, cell in enumerate(frame[label_column].tolist())]
    if task == "classification":
        for i, value in enumerate(label_values):
            if value != int(value) or value < 0:
                raise IngestionError(
                    f"label {value!r} at row {i}, column {label_index} is not a non-negative integer",
                    row=i,
                    column=label_index,
                )
        labels = np.array([int(v) for v in label_values], dtype=np.int64)
    else:
        labels = np.array(label_values, dtype=np.float64)

    digest = hashlib.sha256(raw).hexdigest()
    logger.info("Loaded %d rows x %d features from %s", rows, len(feature_columns), path)
    return Dataset(
        features=features,
        labels=labels,
        provenance=Provenance(source="csv", name=str(path), params={"label_column": label_column}, sha256=digest),
        feature_names=tuple(feature_columns),
        label_name=label_column,
        task=task,
    )


def write_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Export with 17 significant digits so `load_csv` reproduces every value."""
    path = Path(path)
    frame = pd.DataFrame(dataset.features, columns=list(dataset.feature_names))
    frame[dataset.label_name] = dataset.labels
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    return path


def minibatches(
    dataset: Dataset,
    batch_size: int,
    seed: int,
    shuffle: bool = True,
    epoch: int = 0,
) -> Iterator[Batch]:
    """One epoch of batches; the last batch may be smaller."""
    n = len(dataset)
    if batch_size < 1 or batch_size > n:
        raise InvalidInputError(f"batch size must be in [1, {n}], got {batch_size}")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(dataset.features[idx], dataset.labels[idx])


def split_dataset(dataset: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    """Seeded partition into (train, test); both keep the original row order."""
    indices = np.arange(len(dataset))
    try:
        train_idx, test_idx = train_test_split(
            indices, test_size=spec.test_fraction, random_state=_sklearn_seed(spec.seed), shuffle=True
        )
    except ValueError as exc:
        raise InvalidInputError(f"cannot split {len(dataset)} rows with test_fraction {spec.test_fraction}: {exc}") from exc
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))
