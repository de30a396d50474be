"""
Closed-form loss oracles and the double-well flat-minimum experiment.

The double well lives on a 1x2 weight matrix w through u = (w0 - w1)/sqrt(2):

    L(u) = -A_s exp(-(u - c_s)^2 / (2 s_s^2)) - A_f exp(-(u - c_f)^2 / (2 s_f^2))

With the default common_curvature of 0 the gradient rows are zero-mean, so
centralization leaves them unchanged and SAM and GCSAM follow the same path.
A positive common_curvature adds 1/2 k c^2 in the common mode
c = (w0 + w1)/sqrt(2); centralization then strips that part of the gradient
and GCSAM spends the whole radius along u. A point belongs to the basin on its side
of the barrier (the loss maximum between the two centers), i.e. the minimum
gradient flow from that point would reach.
"""
import logging
import math
from typing import Any, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .centralization import GcConfig
from .errors import InvalidInputError
from .optim import OptimizerKind, SamConfig, Sgd, SgdConfig, TrainingOptimizer
from .tensor import ParamSet

logger = logging.getLogger(__name__)

__all__ = [
    "QuadraticOracle",
    "LinearOracle",
    "DoubleWellConfig",
    "DoubleWellOracle",
    "PerturbedProfile",
    "find_barrier",
    "perturbed_loss_profile",
    "BasinSelectionResult",
    "basin_selection_experiment",
]

WELL_PARAM = "well.weight"
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class QuadraticOracle:
    """L(w) = 1/2 sum_i lambda_i w_i^2 with a scalar or per-tensor curvature."""

    def __init__(self, curvature: Union[float, Mapping[str, Any]] = 1.0):
        self.curvature = curvature

    def _lam(self, name: str):
        if isinstance(self.curvature, Mapping):
            value = self.curvature[name]
            return value.data if hasattr(value, "data") else np.asarray(value, dtype=np.float64)
        return float(self.curvature)

    def __call__(self, params: ParamSet, batch: Any = None) -> Tuple[float, ParamSet]:
        grads = {name: self._lam(name) * t.data for name, t in params.items()}
        return self.loss(params, batch), ParamSet.from_arrays(grads)

    def loss(self, params: ParamSet, batch: Any = None) -> float:
        return float(sum(0.5 * np.sum(self._lam(name) * t.data * t.data) for name, t in params.items()))


class LinearOracle:
    """L(w) = c^T w."""

    def __init__(self, coefficients: ParamSet):
        self.coefficients = coefficients

    def __call__(self, params: ParamSet, batch: Any = None) -> Tuple[float, ParamSet]:
        return self.loss(params, batch), self.coefficients

    def loss(self, params: ParamSet, batch: Any = None) -> float:
        return self.coefficients.dot(params)


class DoubleWellConfig(BaseModel):
    model_config = {"extra": "forbid"}

    sharp_depth: float = 1.05
    flat_depth: float = 1.0
    sharp_width: float = Field(default=0.1, gt=0)
    flat_width: float = Field(default=1.0, gt=0)
    sharp_center: float = 0.0
    flat_center: float = 2.0
    rho: float = Field(default=0.4, gt=0)
    lr: float = Field(default=0.01, gt=0)
    steps: int = Field(default=1500, ge=1)
    sharp_init: Tuple[float, float] = (-0.25, 0.25)
    flat_init: Tuple[float, float] = (1.0, 3.0)
    common_curvature: float = Field(default=0.0, ge=0, description="k in the 1/2 k c^2 common-mode term")

    @model_validator(mode="after")
    def _asymmetric(self) -> "DoubleWellConfig":
        if not self.sharp_depth > self.flat_depth > 0:
            raise ValueError("the sharp well must be deeper than the flat well")
        if self.flat_width < 10 * self.sharp_width:
            raise ValueError("the flat well must be at least 10x wider than the sharp well")
        if not self.rho > self.sharp_width:
            raise ValueError("rho must exceed the sharp well's width")
        if not self.sharp_center < self.flat_center:
            raise ValueError("sharp_center must lie below flat_center")
        return self

    def loss_u(self, u):
        u = np.asarray(u, dtype=np.float64)
        sharp = self.sharp_depth * np.exp(-((u - self.sharp_center) ** 2) / (2 * self.sharp_width ** 2))
        flat = self.flat_depth * np.exp(-((u - self.flat_center) ** 2) / (2 * self.flat_width ** 2))
        return -sharp - flat

    def grad_u(self, u):
        u = np.asarray(u, dtype=np.float64)
        sharp = self.sharp_depth * np.exp(-((u - self.sharp_center) ** 2) / (2 * self.sharp_width ** 2))
        flat = self.flat_depth * np.exp(-((u - self.flat_center) ** 2) / (2 * self.flat_width ** 2))
        return sharp * (u - self.sharp_center) / self.sharp_width ** 2 + flat * (u - self.flat_center) / self.flat_width ** 2


def _u_of(params: ParamSet) -> float:
    w = params[WELL_PARAM].data
    return float((w[0, 0] - w[0, 1]) * _INV_SQRT2)


def _common_of(params: ParamSet) -> float:
    w = params[WELL_PARAM].data
    return float((w[0, 0] + w[0, 1]) * _INV_SQRT2)


class DoubleWellOracle:
    def __init__(self, config: Optional[DoubleWellConfig] = None):
        self.config = config or DoubleWellConfig()

    @staticmethod
    def params_for(u: float, common: float = 0.0) -> ParamSet:
        return ParamSet({WELL_PARAM: [[common + u * _INV_SQRT2, common - u * _INV_SQRT2]]})

    def __call__(self, params: ParamSet, batch: Any = None) -> Tuple[float, ParamSet]:
        u = _u_of(params)
        du = float(self.config.grad_u(u))
        grad = np.array([[du * _INV_SQRT2, -du * _INV_SQRT2]])
        if self.config.common_curvature:
            grad = grad + self.config.common_curvature * _common_of(params) * _INV_SQRT2
        return self.loss(params), ParamSet.from_arrays({WELL_PARAM: grad})

    def loss(self, params: ParamSet, batch: Any = None) -> float:
        common = 0.5 * self.config.common_curvature * _common_of(params) ** 2
        return float(self.config.loss_u(_u_of(params))) + common


class PerturbedProfile(BaseModel):
    """Dense-grid brute force of L(u) and max_{|e| <= rho} L(u + e)."""

    rho: float
    u: List[float]
    loss: List[float]
    perturbed_loss: List[float]
    barrier: float
    loss_argmin: float
    perturbed_argmin: float

    def basin(self, u: float) -> Literal["sharp", "flat"]:
        return "sharp" if u < self.barrier else "flat"


def find_barrier(config: DoubleWellConfig, points: int = 10_001) -> float:
    """Location of the loss maximum between the two well centers."""
    between = np.linspace(config.sharp_center, config.flat_center, points)
    return float(between[np.argmax(config.loss_u(between))])


def perturbed_loss_profile(
    config: Optional[DoubleWellConfig] = None,
    rho: Optional[float] = None,
    grid_points: int = 2001,
    ball_points: int = 10_000,
) -> PerturbedProfile:
    """
    Brute-force oracle: evaluates L on `grid_points` values of u spanning both
    wells and, for each, the max of L over `ball_points` offsets in [-rho, rho].
    """
    config = config or DoubleWellConfig()
    rho = config.rho if rho is None else rho
    margin = 3 * config.flat_width + rho
    u = np.linspace(config.sharp_center - margin, config.flat_center + margin, grid_points)
    offsets = np.linspace(-rho, rho, ball_points)
    loss = config.loss_u(u)
    perturbed = np.array([config.loss_u(x + offsets).max() for x in u])

    barrier = find_barrier(config)
    return PerturbedProfile(
        rho=rho,
        u=u.tolist(),
        loss=loss.tolist(),
        perturbed_loss=perturbed.tolist(),
        barrier=barrier,
        loss_argmin=float(u[np.argmin(loss)]),
        perturbed_argmin=float(u[np.argmin(perturbed)]),
    )


class BasinSelectionResult(BaseModel):
    kind: OptimizerKind
    seeds: List[int]
    initial_u: List[float]
    terminal_u: List[float]
    basins: List[Literal["sharp", "flat"]]
    barrier: float
    max_removed_sq_norm: Optional[float] = Field(
        default=None, description="Largest squared norm centralization removed in any step; gcsam only"
    )

    @property
    def centralization_changed_path(self) -> Optional[bool]:
        """False when centralization never altered a gradient, so gcsam retraced sam exactly."""
        if self.max_removed_sq_norm is None:
            return None
        return self.max_removed_sq_norm > 0.0

    @property
    def flat_fraction(self) -> float:
        return self.basins.count("flat") / len(self.basins)

    @property
    def sharp_fraction(self) -> float:
        return self.basins.count("sharp") / len(self.basins)


def _initial_u(config: DoubleWellConfig, seed: int) -> Tuple[float, float]:
    """Seeds with seed % 5 in {0, 1, 2} start in the sharp basin, the rest in the flat one."""
    rng = np.random.default_rng(seed)
    lo, hi = config.sharp_init if seed % 5 in (0, 1, 2) else config.flat_init
    return float(rng.uniform(lo, hi)), float(rng.uniform(-0.5, 0.5))


def basin_selection_experiment(
    kind: OptimizerKind,
    seeds: Sequence[int] = tuple(range(50)),
    config: Optional[DoubleWellConfig] = None,
) -> BasinSelectionResult:
    """Run `kind` (SGD base, constant lr) from each seeded init and classify the terminal basin."""
    if kind == "adam":
        raise InvalidInputError("the basin experiment uses an SGD base; choose sgd, sam or gcsam")
    if not seeds:
        raise InvalidInputError("need at least one seed")
    config = config or DoubleWellConfig()
    oracle = DoubleWellOracle(config)
    barrier = find_barrier(config)
    optimizer = TrainingOptimizer(
        kind,
        Sgd(SgdConfig(lr=config.lr)),
        SamConfig(rho=config.rho, gc=GcConfig()) if kind in ("sam", "gcsam") else None,
    )

    initial, terminal, basins = [], [], []
    removed = 0.0 if kind == "gcsam" else None
    for seed in seeds:
        u0, common = _initial_u(config, seed)
        params = DoubleWellOracle.params_for(u0, common)
        state = optimizer.init_state(params)
        for _ in range(config.steps):
            params, state, telemetry = optimizer.step(params, None, oracle, state)
            if removed is not None:
                for report in (telemetry.ascent, telemetry.descent):
                    if report is not None:
                        removed = max(removed, report.removed_sq_norm)
        u = _u_of(params)
        initial.append(u0)
        terminal.append(u)
        basins.append("sharp" if u < barrier else "flat")
        logger.debug("%s seed %d: u %.4f -> %.4f", kind, seed, u0, u)

    result = BasinSelectionResult(
        kind=kind,
        seeds=list(seeds),
        initial_u=initial,
        terminal_u=terminal,
        basins=basins,
        barrier=barrier,
        max_removed_sq_norm=removed,
    )
    logger.info("%s: %.0f%% of %d seeds ended in the flat basin", kind, 100 * result.flat_fraction, len(seeds))
    if result.centralization_changed_path is False:
        logger.info("gcsam: gradients were already centralized; the path is identical to sam")
    return result
