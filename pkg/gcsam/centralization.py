"""
Gradient centralization: per-column mean removal on weight-matrix gradients.

Every 1-D fiber of a gradient along `column_axis` is projected onto the
zero-mean hyperplane, g_i <- g_i - mean(g_i). With weights stored as
(fan_out, fan_in) the default axis 1 centralizes each unit's incoming weight
gradient. The projection is computed as mean subtraction; P = I - ee^T is
never materialized.
"""
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .errors import ContractError, InvalidInputError
from .tensor import ParamSet, Tensor

__all__ = [
    "GcConfig",
    "CentralizationReport",
    "centralize_matrix",
    "centralize_param_set",
    "projection_idempotence_residual",
]


class GcConfig(BaseModel):
    model_config = {"extra": "forbid"}

    enabled: bool = True
    min_rank: int = Field(default=2, ge=1, description="Minimum tensor rank for centralization to apply")
    column_axis: int = Field(default=1, description="Axis along which column means are taken")


class CentralizationReport(BaseModel):
    orig_sq_norm: float = 0.0
    gc_sq_norm: float = 0.0
    removed_sq_norm: float = 0.0
    column_means: List[float] = Field(default_factory=list)
    tensors: Dict[str, "CentralizationReport"] = Field(default_factory=dict)

    @property
    def ratio(self) -> float:
        """gc / orig squared norm; 1.0 for a zero gradient."""
        if self.orig_sq_norm == 0.0:
            return 1.0
        return self.gc_sq_norm / self.orig_sq_norm


CentralizationReport.model_rebuild()

def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise InvalidInputError(f"column_axis {axis} is out of range for a rank-{ndim} tensor")
    return axis % ndim


def centralize_matrix(
    grad: Union[Tensor, np.ndarray],
    cfg: GcConfig,
) -> Tuple[Tensor, CentralizationReport]:
    """Centralize one gradient tensor of rank >= cfg.min_rank."""
    tensor = grad if isinstance(grad, Tensor) else Tensor(grad)
    g = tensor.data
    if g.ndim < cfg.min_rank:
        raise ContractError(
            f"centralization needs rank >= {cfg.min_rank}, got shape {g.shape}; route such tensors around GC"
        )
    axis = _normalize_axis(cfg.column_axis, g.ndim)
    if not np.all(np.isfinite(g)):
        raise InvalidInputError("non-finite gradient cannot be centralized")

    orig = float(np.vdot(g, g))
    if not cfg.enabled:
        return tensor, CentralizationReport.model_construct(
            orig_sq_norm=orig, gc_sq_norm=orig, removed_sq_norm=0.0, column_means=[], tensors={}
        )

    means = g.mean(axis=axis, keepdims=True)
    centered = g - means
    removed = float(g.shape[axis] * np.vdot(means, means))
    report = CentralizationReport.model_construct(
        orig_sq_norm=orig,
        gc_sq_norm=float(np.vdot(centered, centered)),
        removed_sq_norm=removed,
        column_means=means.ravel().tolist(),
        tensors={},
    )
    return Tensor._wrap(centered), report


def centralize_param_set(grads: ParamSet, cfg: GcConfig) -> Tuple[ParamSet, CentralizationReport]:
    """
    Centralize every gradient of rank >= min_rank; lower-rank tensors such as
    biases pass through. The aggregate report sums per-tensor norms and keeps
    the per-tensor breakdown under `tensors`.
    """
    arrays: Dict[str, np.ndarray] = {}
    per_tensor: Dict[str, CentralizationReport] = {}
    orig = gc = removed = 0.0
    for name, tensor in grads.items():
        if tensor.ndim < cfg.min_rank:
            if not np.all(np.isfinite(tensor.data)):
                raise InvalidInputError(f"{name}: non-finite gradient cannot be centralized")
            sq = float(np.vdot(tensor.data, tensor.data))
            report = CentralizationReport.model_construct(
                orig_sq_norm=sq, gc_sq_norm=sq, removed_sq_norm=0.0, column_means=[], tensors={}
            )
            arrays[name] = tensor.data
        else:
            try:
                centered, report = centralize_matrix(tensor, cfg)
            except InvalidInputError as exc:
                raise InvalidInputError(f"{name}: {exc}") from exc
            arrays[name] = centered.data
        per_tensor[name] = report
        orig += report.orig_sq_norm
        gc += report.gc_sq_norm
        removed += report.removed_sq_norm

    out = grads if not cfg.enabled else ParamSet.from_arrays(arrays)
    return out, CentralizationReport.model_construct(
        orig_sq_norm=orig, gc_sq_norm=gc, removed_sq_norm=removed, column_means=[], tensors=per_tensor
    )


def projection_idempotence_residual(grad: Union[Tensor, np.ndarray], cfg: GcConfig) -> float:
    """Infinity-norm of centralize(centralize(g)) - centralize(g)."""
    once, _ = centralize_matrix(grad, cfg)
    twice, _ = centralize_matrix(once, cfg)
    if once.size == 0:
        return 0.0
    return float(np.max(np.abs(twice.data - once.data)))
