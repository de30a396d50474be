"""
Base optimizers and the two-evaluation sharpness-aware wrappers.

SGD and Adam are pure update rules over ParamSets. `sam_step` and
`gcsam_step` share one two-pass implementation: gradient at w, perturbation
of radius rho along the (optionally centralized) gradient, gradient at the
perturbed point, then the base update applied at the original w. Both
therefore cost exactly two oracle calls per step.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .centralization import CentralizationReport, GcConfig, centralize_param_set
from .errors import (
    ConfigError,
    GcsamError,
    InvalidInputError,
    NonFiniteGradientError,
    StepAbortedError,
)
from .tensor import ParamSet

logger = logging.getLogger(__name__)

__all__ = [
    "SgdConfig",
    "AdamConfig",
    "SamConfig",
    "OptimizerState",
    "GradientOracle",
    "CountingOracle",
    "StepTelemetry",
    "TELEMETRY_COLUMNS",
    "sgd_step",
    "adam_step",
    "compute_perturbation",
    "sam_step",
    "gcsam_step",
    "Sgd",
    "Adam",
    "BaseOptimizer",
    "OptimizerKind",
    "TrainingOptimizer",
]

OptimizerKind = Literal["sgd", "adam", "sam", "gcsam"]


class SgdConfig(BaseModel):
    model_config = {"extra": "forbid"}

    lr: float = Field(default=0.1, gt=0, description="Step size alpha")
    momentum: float = Field(default=0.0, ge=0, lt=1)
    weight_decay: float = Field(default=0.0, ge=0, description="L2 coefficient added to the gradient")


class AdamConfig(BaseModel):
    model_config = {"extra": "forbid"}

    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps_stab: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)


class SamConfig(BaseModel):
    model_config = {"extra": "forbid"}

    rho: float = Field(default=0.05, ge=0, description="Radius of the perturbation ball")
    norm_order: int = Field(default=2, description="Only the 2-norm is supported")
    centralize_ascent: bool = True
    centralize_descent: bool = True
    gc: GcConfig = Field(default_factory=GcConfig)
    zero_grad_tolerance: float = Field(default=1e-12, ge=0)

    @field_validator("norm_order")
    @classmethod
    def _only_two_norm(cls, value: int) -> int:
        if value != 2:
            raise ValueError(f"norm_order {value} is not supported; only 2 is")
        return value


@dataclass(frozen=True)
class OptimizerState:
    """Step count plus named slot ParamSets (momentum, first/second moments)."""

    step: int = 0
    slots: Dict[str, ParamSet] = field(default_factory=dict)


class GradientOracle(Protocol):
    def __call__(self, params: ParamSet, batch: Any) -> Tuple[float, ParamSet]:
        ...


class CountingOracle:
    """Oracle wrapper that counts gradient evaluations."""

    def __init__(self, oracle: GradientOracle):
        self.oracle = oracle
        self.calls = 0

    def __call__(self, params: ParamSet, batch: Any) -> Tuple[float, ParamSet]:
        self.calls += 1
        return self.oracle(params, batch)

    def loss(self, params: ParamSet, batch: Any) -> float:
        return self.oracle.loss(params, batch)


TELEMETRY_COLUMNS: List[str] = [
    "step",
    "loss_clean",
    "loss_perturbed",
    "eps_norm",
    "orig_sq_norm",
    "gc_sq_norm",
    "step_wall_ns",
]


class StepTelemetry(BaseModel):
    step: int
    loss_clean: float
    loss_perturbed: Optional[float] = None
    eps_norm: float = 0.0
    orig_sq_norm: float
    gc_sq_norm: float
    step_wall_ns: int = 0
    oracle_calls: int = 0
    ascent: Optional[CentralizationReport] = None
    descent: Optional[CentralizationReport] = None

    def csv_row(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in TELEMETRY_COLUMNS}


# ---------------------------------------------------------------------------
# Base update rules
# ---------------------------------------------------------------------------

def _check_gradients(params: ParamSet, grads: ParamSet) -> None:
    params._check_compatible(grads)
    bad = grads.first_non_finite()
    if bad is not None:
        raise NonFiniteGradientError(bad)


def sgd_step(
    params: ParamSet,
    grads: ParamSet,
    state: OptimizerState,
    cfg: SgdConfig,
) -> Tuple[ParamSet, OptimizerState]:
    """v <- momentum*v + g + wd*w; w <- w - lr*v."""
    _check_gradients(params, grads)
    buffers = state.slots.get("momentum")
    new_params: Dict[str, np.ndarray] = {}
    new_buffers: Dict[str, np.ndarray] = {}
    for name, w in params.items():
        direction = grads[name].data
        if cfg.weight_decay:
            direction = direction + cfg.weight_decay * w.data
        if cfg.momentum:
            if buffers is not None:
                direction = cfg.momentum * buffers[name].data + direction
            new_buffers[name] = direction
        new_params[name] = w.data - cfg.lr * direction
    slots = dict(state.slots)
    if cfg.momentum:
        slots["momentum"] = ParamSet.from_arrays(new_buffers)
    return ParamSet.from_arrays(new_params), OptimizerState(step=state.step + 1, slots=slots)


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    state: OptimizerState,
    cfg: AdamConfig,
) -> Tuple[ParamSet, OptimizerState]:
    """Bias-corrected Adam; weight decay is added to the gradient first."""
    _check_gradients(params, grads)
    t = state.step + 1
    first = state.slots.get("m")
    second = state.slots.get("v")
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, w in params.items():
        g = grads[name].data
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w.data
        m_prev = first[name].data if first is not None else 0.0
        v_prev = second[name].data if second is not None else 0.0
        m = cfg.beta1 * m_prev + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v_prev + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = w.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_stab)
        new_m[name] = np.asarray(m, dtype=np.float64)
        new_v[name] = np.asarray(v, dtype=np.float64)
    slots = dict(state.slots)
    slots["m"] = ParamSet.from_arrays(new_m)
    slots["v"] = ParamSet.from_arrays(new_v)
    return ParamSet.from_arrays(new_params), OptimizerState(step=t, slots=slots)


class BaseOptimizer(Protocol):
    name: str

    def init_state(self, params: ParamSet) -> OptimizerState:
        ...

    def step(self, params: ParamSet, grads: ParamSet, state: OptimizerState) -> Tuple[ParamSet, OptimizerState]:
        ...


class Sgd:
    name = "sgd"

    def __init__(self, config: Optional[SgdConfig] = None):
        self.config = config or SgdConfig()

    def init_state(self, params: ParamSet) -> OptimizerState:
        return OptimizerState()

    def step(self, params, grads, state):
        return sgd_step(params, grads, state, self.config)


class Adam:
    name = "adam"

    def __init__(self, config: Optional[AdamConfig] = None):
        self.config = config or AdamConfig()

    def init_state(self, params: ParamSet) -> OptimizerState:
        return OptimizerState()

    def step(self, params, grads, state):
        return adam_step(params, grads, state, self.config)


# ---------------------------------------------------------------------------
# Sharpness-aware steps
# ---------------------------------------------------------------------------

def compute_perturbation(grads: ParamSet, cfg: SamConfig) -> ParamSet:
    """
    eps = rho * g / ||g||_2 with the norm taken over all tensors together.
    Returns zeros when ||g|| is at or below cfg.zero_grad_tolerance.
    """
    if cfg.norm_order != 2:
        raise InvalidInputError(f"norm_order {cfg.norm_order} is not supported")
    bad = grads.first_non_finite()
    if bad is not None:
        raise NonFiniteGradientError(bad)
    norm = grads.norm()
    if cfg.rho == 0.0 or norm <= cfg.zero_grad_tolerance:
        if cfg.rho:
            logger.debug("Gradient norm %.3g at or below tolerance; perturbation skipped", norm)
        return grads.zeros_like()
    return grads.scale(cfg.rho / norm)


def _plain_report(grads: ParamSet) -> CentralizationReport:
    sq = grads.sq_norm()
    return CentralizationReport.model_construct(
        orig_sq_norm=sq, gc_sq_norm=sq, removed_sq_norm=0.0, column_means=[], tensors={}
    )


def _two_pass_step(
    params: ParamSet,
    batch: Any,
    oracle: GradientOracle,
    base: BaseOptimizer,
    state: OptimizerState,
    cfg: SamConfig,
    centralize_ascent: bool,
    centralize_descent: bool,
) -> Tuple[ParamSet, OptimizerState, StepTelemetry]:
    started = time.perf_counter_ns()
    counter = CountingOracle(oracle)

    loss_clean, grads = counter(params, batch)
    bad = grads.first_non_finite()
    if bad is not None:
        raise NonFiniteGradientError(bad)

    if centralize_ascent:
        ascent_grads, ascent_report = centralize_param_set(grads, cfg.gc)
    else:
        ascent_grads, ascent_report = grads, _plain_report(grads)
    eps = compute_perturbation(ascent_grads, cfg)

    try:
        loss_perturbed, adversarial = counter(params + eps, batch)
    except (GcsamError, ArithmeticError) as exc:
        raise StepAbortedError(f"oracle failed at the perturbed point: {exc}") from exc
    if not np.isfinite(loss_perturbed) or adversarial.first_non_finite() is not None:
        raise StepAbortedError("oracle returned non-finite values at the perturbed point")

    descent_report = None
    if centralize_descent:
        adversarial, descent_report = centralize_param_set(adversarial, cfg.gc)

    new_params, new_state = base.step(params, adversarial, state)
    telemetry = StepTelemetry(
        step=new_state.step,
        loss_clean=float(loss_clean),
        loss_perturbed=float(loss_perturbed),
        eps_norm=eps.norm(),
        orig_sq_norm=ascent_report.orig_sq_norm,
        gc_sq_norm=ascent_report.gc_sq_norm,
        step_wall_ns=time.perf_counter_ns() - started,
        oracle_calls=counter.calls,
        ascent=ascent_report,
        descent=descent_report,
    )
    return new_params, new_state, telemetry


def sam_step(
    params: ParamSet,
    batch: Any,
    oracle: GradientOracle,
    base: BaseOptimizer,
    state: OptimizerState,
    cfg: SamConfig,
) -> Tuple[ParamSet, OptimizerState, StepTelemetry]:
    """Plain SAM step; the centralization switches in cfg are ignored."""
    return _two_pass_step(params, batch, oracle, base, state, cfg, False, False)


def gcsam_step(
    params: ParamSet,
    batch: Any,
    oracle: GradientOracle,
    base: BaseOptimizer,
    state: OptimizerState,
    cfg: SamConfig,
) -> Tuple[ParamSet, OptimizerState, StepTelemetry]:
    """SAM with centralized ascent and (by default) descent gradients."""
    return _two_pass_step(
        params, batch, oracle, base, state, cfg, cfg.centralize_ascent, cfg.centralize_descent
    )


class TrainingOptimizer:
    """
    The single optimizer object the training loop drives.

    kind "sgd"/"adam" uses `base` directly with one oracle call per step;
    "sam"/"gcsam" wrap `base` with the two-pass step.
    """

    def __init__(self, kind: OptimizerKind, base: BaseOptimizer, sam: Optional[SamConfig] = None):
        if kind in ("sam", "gcsam") and sam is None:
            raise ConfigError(f"optimizer '{kind}' needs a sam block")
        if kind in ("sgd", "adam") and base.name != kind:
            raise ConfigError(f"optimizer '{kind}' cannot use base '{base.name}'")
        self.kind = kind
        self.base = base
        self.sam = sam

    @property
    def oracle_calls_per_step(self) -> int:
        return 2 if self.kind in ("sam", "gcsam") else 1

    def init_state(self, params: ParamSet) -> OptimizerState:
        return self.base.init_state(params)

    def step(
        self,
        params: ParamSet,
        batch: Any,
        oracle: GradientOracle,
        state: OptimizerState,
    ) -> Tuple[ParamSet, OptimizerState, StepTelemetry]:
        if self.kind == "sam":
            return sam_step(params, batch, oracle, self.base, state, self.sam)
        if self.kind == "gcsam":
            return gcsam_step(params, batch, oracle, self.base, state, self.sam)

        started = time.perf_counter_ns()
        loss, grads = oracle(params, batch)
        new_params, new_state = self.base.step(params, grads, state)
        sq = grads.sq_norm()
        return new_params, new_state, StepTelemetry(
            step=new_state.step,
            loss_clean=float(loss),
            orig_sq_norm=sq,
            gc_sq_norm=sq,
            step_wall_ns=time.perf_counter_ns() - started,
            oracle_calls=1,
        )
