"""
Feedforward MLPs built on the grad-engine, and the gradient oracle used by
training and analysis.

Weights are stored (fan_out, fan_in) under `layer{i}.weight`, biases under
`layer{i}.bias`.
"""
import hashlib
import json
from typing import Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from . import tensor as T
from .data import Batch, Dataset
from .errors import InvalidInputError
from .tensor import ParamSet, Tensor, value_and_grad

__all__ = [
    "MlpSpec",
    "init_params",
    "forward",
    "preactivations",
    "loss_and_grad",
    "batch_loss",
    "evaluate",
    "parameter_count",
    "spec_hash",
    "MlpOracle",
]


class MlpSpec(BaseModel):
    model_config = {"extra": "forbid"}

    layer_sizes: List[int] = Field(min_length=2, description="Input width, hidden widths, output width")
    activation: Literal["relu", "tanh"] = "relu"
    loss: Literal["softmax_xent", "mse"] = "softmax_xent"
    init: Literal["glorot_uniform", "he_uniform"] = "glorot_uniform"
    seed: int = Field(default=0, ge=0)

    @field_validator("layer_sizes")
    @classmethod
    def _positive_sizes(cls, sizes: List[int]) -> List[int]:
        if any(size < 1 for size in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        return sizes

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1


def _init_bound(spec: MlpSpec, fan_in: int, fan_out: int) -> float:
    if spec.init == "he_uniform":
        return float(np.sqrt(6.0 / fan_in))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(spec: MlpSpec) -> ParamSet:
    rng = np.random.default_rng(spec.seed)
    arrays: Dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        bound = _init_bound(spec, fan_in, fan_out)
        arrays[f"layer{i}.weight"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        arrays[f"layer{i}.bias"] = np.zeros(fan_out)
    return ParamSet.from_arrays(arrays)


def parameter_count(spec: MlpSpec) -> int:
    return sum(fan_out * fan_in + fan_out for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))


def spec_hash(spec: MlpSpec) -> str:
    """SHA-256 of the architecture; the init seed is not part of it."""
    canonical = json.dumps(spec.model_dump(exclude={"seed"}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_features(spec: MlpSpec, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.layer_sizes[0]:
        raise InvalidInputError(
            f"features of shape {features.shape} do not match input width {spec.layer_sizes[0]}"
        )
    return features


def _activate(spec: MlpSpec, z):
    return T.relu(z) if spec.activation == "relu" else T.tanh(z)


def forward(spec: MlpSpec, params: Mapping[str, Tensor], features: np.ndarray) -> Tensor:
    """Output-layer activations (logits); recorded when params are Vars."""
    h = _check_features(spec, features)
    for i in range(spec.num_layers):
        z = T.bias_add(T.matmul(h, T.transpose(params[f"layer{i}.weight"])), params[f"layer{i}.bias"])
        h = _activate(spec, z) if i < spec.num_layers - 1 else z
    return h


def preactivations(spec: MlpSpec, params: ParamSet, features: np.ndarray) -> List[np.ndarray]:
    """Hidden-layer pre-activation values, one array per hidden layer."""
    h = _check_features(spec, features)
    out = []
    for i in range(spec.num_layers - 1):
        z = h @ params[f"layer{i}.weight"].data.T + params[f"layer{i}.bias"].data
        out.append(z)
        h = np.maximum(z, 0.0) if spec.activation == "relu" else np.tanh(z)
    return out


def _targets(spec: MlpSpec, labels: np.ndarray, rows: int) -> np.ndarray:
    width = spec.layer_sizes[-1]
    labels = np.asarray(labels)
    if labels.shape[0] != rows:
        raise InvalidInputError(f"{rows} feature rows but {labels.shape[0]} labels")
    if labels.dtype.kind in "iub":
        if labels.size and (labels.min() < 0 or labels.max() >= width):
            raise InvalidInputError(f"labels must lie in [0, {width}) for one-hot targets")
        onehot = np.zeros((rows, width))
        onehot[np.arange(rows), labels.astype(np.int64)] = 1.0
        return onehot
    if width == 1 and labels.ndim == 1:
        return labels.astype(np.float64).reshape(rows, 1)
    if labels.shape == (rows, width):
        return labels.astype(np.float64)
    raise InvalidInputError(f"real targets of shape {labels.shape} do not match output width {width}")


def _loss(spec: MlpSpec, params: Mapping[str, Tensor], batch: Batch) -> Tensor:
    features, labels = batch
    logits = forward(spec, params, features)
    rows = logits.shape[0]
    if spec.loss == "softmax_xent":
        labels = np.asarray(labels)
        if labels.shape != (rows,):
            raise InvalidInputError(f"{rows} feature rows but labels have shape {labels.shape}")
        if labels.dtype.kind not in "iub":
            raise InvalidInputError("softmax_xent needs integer class labels")
        if labels.size and (labels.min() < 0 or labels.max() >= spec.layer_sizes[-1]):
            raise InvalidInputError(f"labels must lie in [0, {spec.layer_sizes[-1]})")
        return T.softmax_cross_entropy(logits, labels)
    return T.mse(logits, _targets(spec, labels, rows))


def loss_and_grad(spec: MlpSpec, params: ParamSet, batch: Batch) -> Tuple[float, ParamSet]:
    """Minibatch-mean loss and its exact gradient."""
    return value_and_grad(lambda tracked: _loss(spec, tracked, batch), params)


def batch_loss(spec: MlpSpec, params: ParamSet, batch: Batch) -> float:
    return _loss(spec, params, batch).item()


def evaluate(spec: MlpSpec, params: ParamSet, dataset: Union[Dataset, Batch]) -> Tuple[float, Optional[float]]:
    """
    Full-dataset mean loss and accuracy. Accuracy is None for real-valued
    targets; argmax ties go to the lowest class index.
    """
    batch = dataset.batch() if isinstance(dataset, Dataset) else Batch(*dataset)
    if batch.features.shape[0] == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    logits = forward(spec, params, batch.features)
    loss = (
        T.softmax_cross_entropy(logits, batch.labels)
        if spec.loss == "softmax_xent"
        else T.mse(logits, _targets(spec, batch.labels, logits.shape[0]))
    ).item()
    labels = np.asarray(batch.labels)
    if labels.dtype.kind not in "iub":
        return loss, None
    predictions = np.argmax(logits.data, axis=1)
    return loss, float(np.mean(predictions == labels))


class MlpOracle:
    """GradientOracle for an MLP: (params, batch) -> (loss, grads)."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec

    def __call__(self, params: ParamSet, batch: Union[Batch, Dataset]) -> Tuple[float, ParamSet]:
        if isinstance(batch, Dataset):
            batch = batch.batch()
        return loss_and_grad(self.spec, params, batch)

    def loss(self, params: ParamSet, batch: Union[Batch, Dataset]) -> float:
        if isinstance(batch, Dataset):
            batch = batch.batch()
        return batch_loss(self.spec, params, batch)
