"""
Post-training instruments: sharpness estimation, 2-D loss-landscape slices and
the PAC-Bayes style generalization bound.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from .errors import BoundDomainError, EvaluationError, GcsamError, InvalidInputError
from .optim import GradientOracle
from .tensor import ParamSet

logger = logging.getLogger(__name__)

__all__ = [
    "DirectionRecord",
    "SharpnessEstimate",
    "radius_ladder",
    "estimate_sharpness",
    "Normalization",
    "orthogonal_gaussian_directions",
    "GridAxes",
    "LandscapeGrid",
    "sample_landscape",
    "BoundParams",
    "BoundEvaluation",
    "eval_bound",
    "bound_report",
]

Normalization = Literal["raw", "per_layer"]

_GRAD_FLOOR = 1e-12
_MAX_LADDER = 64
DEFAULT_MIN_RADIUS = 1e-2


# ---------------------------------------------------------------------------
# Sharpness
# ---------------------------------------------------------------------------

class DirectionRecord(BaseModel):
    start: Literal["random", "gradient"]
    index: int
    gain: Optional[float] = Field(default=None, description="Best L(w+eps) - L(w) along this start")
    radius: Optional[float] = Field(default=None, description="Ladder radius the best gain was found at")
    oracle_calls: int = 0
    failed: bool = False
    error: Optional[str] = None


class SharpnessEstimate(BaseModel):
    rho: float
    num_random_directions: int
    ascent_steps: int
    seed: int
    base_loss: float
    radii: List[float] = Field(default_factory=list, description="Radius ladder searched, largest first")
    estimate: Optional[float] = Field(default=None, description="max over starts of L(w+eps) - L(w)")
    max_perturbed_loss: Optional[float] = None
    partial: bool = False
    records: List[DirectionRecord] = Field(default_factory=list)


def _project(eps: ParamSet, rho: float) -> ParamSet:
    norm = eps.norm()
    if norm > rho:
        return eps.scale(rho / norm)
    return eps


def radius_ladder(rho: float, min_radius: float = DEFAULT_MIN_RADIUS) -> List[float]:
    """
    rho, rho/2, rho/4, ... down to the first radius at or below `min_radius`.

    The ladder for 2·rho is [2·rho] followed by the ladder for rho whenever
    2·rho > min_radius, bit for bit.
    """
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    if not min_radius > 0:
        raise InvalidInputError(f"min_radius must be positive, got {min_radius}")
    radii = [float(rho)]
    while radii[-1] > min_radius and len(radii) < _MAX_LADDER:
        radii.append(radii[-1] * 0.5)
    return radii


def _ascend(
    oracle: GradientOracle,
    params: ParamSet,
    batch: Any,
    eps: ParamSet,
    rho: float,
    ascent_steps: int,
    record: DirectionRecord,
) -> float:
    best = -math.inf
    for step in range(ascent_steps + 1):
        loss, grads = oracle(params + eps, batch)
        record.oracle_calls += 1
        if not np.isfinite(loss):
            raise EvaluationError(f"non-finite loss {loss} at perturbed point")
        best = max(best, float(loss))
        if step == ascent_steps:
            break
        grad_norm = grads.norm()
        if not np.isfinite(grad_norm):
            raise EvaluationError("non-finite gradient at perturbed point")
        if grad_norm <= _GRAD_FLOOR:
            break
        eps = _project(eps + grads.scale(rho / grad_norm), rho)
    return best


def estimate_sharpness(
    oracle: GradientOracle,
    params: ParamSet,
    dataset: Any,
    rho: float,
    m: int,
    ascent_steps: int,
    seed: int,
    min_radius: float = DEFAULT_MIN_RADIUS,
) -> SharpnessEstimate:
    """
    Lower-bound estimate of max_{||eps|| <= rho} L(w + eps) - L(w) on the full
    dataset.

    Starts are m seeded unit Gaussian directions plus, when the gradient at w
    is nonzero, the unit gradient direction. Every start is searched on each
    radius r of `radius_ladder(rho, min_radius)`: it begins at r times its
    unit direction and takes `ascent_steps` normalized-gradient steps of
    length r, projected back onto the r-ball. A start's gain is its best over
    all radii. Start directions do not depend on rho, so with the same seed
    the search at 2·rho contains the whole search at rho and the estimate
    never decreases.

    Oracle failures are recorded per start and flag the estimate as
    partial; the radii that did succeed still count.
    """
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    if m < 1:
        raise InvalidInputError(f"need at least one random direction, got m={m}")
    if ascent_steps < 0:
        raise InvalidInputError(f"ascent_steps must be >= 0, got {ascent_steps}")
    radii = radius_ladder(rho, min_radius)

    base_loss, base_grads = oracle(params, dataset)
    if not np.isfinite(base_loss):
        raise EvaluationError(f"non-finite loss {base_loss} at the unperturbed point")
    rng = np.random.default_rng(seed)

    starts: List[Tuple[DirectionRecord, ParamSet]] = []
    for i in range(m):
        direction = params.map(lambda a: rng.standard_normal(a.shape))
        norm = direction.norm()
        if norm == 0.0:
            continue
        starts.append((DirectionRecord(start="random", index=i), direction.scale(1.0 / norm)))
    grad_norm = base_grads.norm()
    if np.isfinite(grad_norm) and grad_norm > _GRAD_FLOOR:
        starts.append((DirectionRecord(start="gradient", index=m), base_grads.scale(1.0 / grad_norm)))

    best: Optional[float] = None
    records = []
    for record, unit in starts:
        for radius in radii:
            try:
                peak = _ascend(oracle, params, dataset, unit.scale(radius), radius, ascent_steps, record)
            except (GcsamError, ArithmeticError) as exc:
                record.failed = True
                record.error = record.error or str(exc)
                logger.warning("Sharpness start %s/%d failed at radius %g: %s", record.start, record.index, radius, exc)
                continue
            gain = peak - float(base_loss)
            if record.gain is None or gain > record.gain:
                record.gain, record.radius = gain, radius
        if record.gain is not None:
            best = record.gain if best is None else max(best, record.gain)
        records.append(record)

    return SharpnessEstimate(
        rho=rho,
        num_random_directions=m,
        ascent_steps=ascent_steps,
        seed=seed,
        base_loss=float(base_loss),
        radii=radii,
        estimate=best,
        max_perturbed_loss=None if best is None else float(base_loss) + best,
        partial=any(r.failed for r in records),
        records=records,
    )


# ---------------------------------------------------------------------------
# Landscape
# ---------------------------------------------------------------------------

class _Degenerate(Exception):
    pass


def _orthonormalize(first: np.ndarray, second: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = first / np.linalg.norm(first)
    b = second
    scale = np.linalg.norm(b)
    for _ in range(2):
        b = b - np.vdot(a, b) * a
    residual = np.linalg.norm(b)
    if not residual > 1e-8 * scale:
        raise _Degenerate()
    return a, b / residual


def _draw_directions(params: ParamSet, seed, normalization: Normalization) -> Tuple[ParamSet, ParamSet]:
    rng = np.random.default_rng(seed)
    first = params.map(lambda a: rng.standard_normal(a.shape))
    second = params.map(lambda a: rng.standard_normal(a.shape))
    if normalization == "raw":
        a, b = _orthonormalize(first.flatten(), second.flatten())
        return params.unflatten(a), params.unflatten(b)

    d1, d2 = {}, {}
    for name, tensor in params.items():
        x = first[name].data.ravel()
        if tensor.size == 1:
            d1[name] = (x / np.linalg.norm(x)).reshape(tensor.shape)
            d2[name] = np.zeros(tensor.shape)
            continue
        a, b = _orthonormalize(x, second[name].data.ravel())
        d1[name] = a.reshape(tensor.shape)
        d2[name] = b.reshape(tensor.shape)
    return ParamSet.from_arrays(d1), ParamSet.from_arrays(d2)


def orthogonal_gaussian_directions(
    params: ParamSet,
    seed: int,
    normalization: Normalization = "raw",
) -> Tuple[ParamSet, ParamSet]:
    """
    Two seeded Gaussian directions shaped like `params`, the second
    Gram-Schmidt orthogonalized against the first. "raw" gives unit global
    norm; "per_layer" orthonormalizes tensor by tensor (size-1 tensors get a
    zero second direction).
    """
    if len(params) == 0 or params.num_elements == 0:
        raise InvalidInputError("cannot draw directions for an empty parameter set")
    if normalization not in ("raw", "per_layer"):
        raise InvalidInputError(f"unknown normalization '{normalization}'")
    try:
        return _draw_directions(params, seed, normalization)
    except _Degenerate:
        logger.warning("Degenerate direction draw for seed %d; reseeding once", seed)
    try:
        return _draw_directions(params, [seed, 1], normalization)
    except _Degenerate:
        raise EvaluationError(f"could not draw two independent directions (seed {seed})") from None


class GridAxes(BaseModel):
    model_config = {"extra": "forbid"}

    a_min: float = -1.0
    a_max: float = 1.0
    a_steps: int = Field(default=21, ge=2)
    b_min: float = -1.0
    b_max: float = 1.0
    b_steps: int = Field(default=21, ge=2)

    @model_validator(mode="after")
    def _axes_include_zero(self) -> "GridAxes":
        for axis in ("a", "b"):
            lo, hi, steps = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max"), getattr(self, f"{axis}_steps")
            if not lo < hi:
                raise ValueError(f"{axis}_min must be below {axis}_max")
            values = np.linspace(lo, hi, steps)
            if not np.any(np.abs(values) <= 1e-12 * (hi - lo)):
                raise ValueError(f"axis {axis} over [{lo}, {hi}] with {steps} steps does not include 0")
        return self

    def values(self, axis: Literal["a", "b"]) -> np.ndarray:
        lo, hi, steps = getattr(self, f"{axis}_min"), getattr(self, f"{axis}_max"), getattr(self, f"{axis}_steps")
        values = np.linspace(lo, hi, steps)
        values[np.abs(values) <= 1e-12 * (hi - lo)] = 0.0
        return values

    def center_index(self) -> Tuple[int, int]:
        return int(np.flatnonzero(self.values("a") == 0.0)[0]), int(np.flatnonzero(self.values("b") == 0.0)[0])


@dataclass(frozen=True)
class LandscapeGrid:
    a_values: np.ndarray
    b_values: np.ndarray
    losses: np.ndarray
    center_loss: float
    seed: int
    normalization: Normalization
    d1: Optional[ParamSet] = None
    d2: Optional[ParamSet] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.losses.shape

    def to_frame(self) -> pd.DataFrame:
        a, b = np.meshgrid(self.a_values, self.b_values, indexing="ij")
        return pd.DataFrame({"a": a.ravel(), "b": b.ravel(), "loss": self.losses.ravel()})

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Row-major `a,b,loss` with 17 significant digits; failed cells are `nan`."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(
            path, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n", encoding="utf-8"
        )
        return path


def _loss_fn(oracle):
    loss = getattr(oracle, "loss", None)
    if callable(loss):
        return loss
    return lambda params, batch: oracle(params, batch)[0]


def sample_landscape(
    oracle,
    params: ParamSet,
    axes: GridAxes,
    directions: Tuple[ParamSet, ParamSet],
    dataset: Any,
    seed: int = 0,
    normalization: Normalization = "raw",
    workers: int = 1,
) -> LandscapeGrid:
    """
    Full-dataset loss at w + a*d1 + b*d2 over the grid. The center cell is
    evaluated at the unperturbed parameters. Cells may be evaluated on a
    thread pool; results are placed by index.
    """
    d1, d2 = directions
    params._check_compatible(d1)
    params._check_compatible(d2)
    loss = _loss_fn(oracle)
    a_values, b_values = axes.values("a"), axes.values("b")

    center = float(loss(params, dataset))
    if not np.isfinite(center):
        raise EvaluationError(f"non-finite loss {center} at the landscape center")

    def cell(coords: Tuple[float, float]) -> float:
        a, b = coords
        if a == 0.0 and b == 0.0:
            return center
        try:
            value = float(loss(params + d1.scale(a) + d2.scale(b), dataset))
        except (GcsamError, ArithmeticError) as exc:
            logger.debug("Landscape cell (%g, %g) failed: %s", a, b, exc)
            return math.nan
        return value if np.isfinite(value) else math.nan

    coords = [(float(a), float(b)) for a in a_values for b in b_values]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(cell, coords))
    else:
        values = [cell(c) for c in coords]

    losses = np.array(values, dtype=np.float64).reshape(len(a_values), len(b_values))
    failed = int(np.isnan(losses).sum())
    if failed:
        logger.warning("%d of %d landscape cells were not finite", failed, losses.size)
    return LandscapeGrid(
        a_values=a_values,
        b_values=b_values,
        losses=losses,
        center_loss=center,
        seed=seed,
        normalization=normalization,
        d1=d1,
        d2=d2,
    )


# ---------------------------------------------------------------------------
# Generalization bound
# ---------------------------------------------------------------------------

class BoundParams(BaseModel):
    model_config = {"extra": "forbid"}

    n: int = Field(ge=2, description="Training set size")
    k: int = Field(ge=1, description="Parameter count")
    delta: float = Field(gt=0, lt=1, description="Confidence")
    eta: float = Field(gt=0, description="Prior scale")
    rho: Optional[float] = Field(default=None, gt=0)
    sigma: Optional[float] = Field(default=None, gt=0, description="Posterior std; derives rho")
    constant_term: float = 0.0

    @model_validator(mode="after")
    def _one_radius(self) -> "BoundParams":
        if (self.rho is None) == (self.sigma is None):
            raise ValueError("give exactly one of rho or sigma")
        return self

    @property
    def radius(self) -> float:
        if self.rho is not None:
            return self.rho
        return math.sqrt(self.k) * self.sigma * (1.0 + math.sqrt(math.log(self.n) / self.k)) / self.n

    @property
    def radius_source(self) -> Literal["rho", "sigma"]:
        return "rho" if self.rho is not None else "sigma"


class BoundEvaluation(BaseModel):
    value: float
    max_perturbed_loss: float
    w_sq_norm: float
    rho: float
    rho_source: Literal["rho", "sigma"]
    n: int
    k: int
    delta: float
    eta: float
    constant_term: float
    label: Literal["diagnostic"] = "diagnostic"


def eval_bound(max_perturbed_loss: float, w_sq_norm: float, bp: BoundParams) -> float:
    """
    max_perturbed_loss + sqrt((k*log(1 + ||w||^2/(eta^2 rho^2) * (1 + sqrt(log n / k))^2)
    + 4*log(n/delta) + constant_term) / (n - 1)).
    """
    if not np.isfinite(max_perturbed_loss):
        raise InvalidInputError(f"max perturbed loss must be finite, got {max_perturbed_loss}")
    if not w_sq_norm >= 0:
        raise InvalidInputError(f"squared weight norm must be non-negative, got {w_sq_norm}")
    rho = bp.radius
    spread = (1.0 + math.sqrt(math.log(bp.n) / bp.k)) ** 2
    complexity = bp.k * math.log1p(w_sq_norm / (bp.eta ** 2 * rho ** 2) * spread)
    radicand = (complexity + 4.0 * math.log(bp.n / bp.delta) + bp.constant_term) / (bp.n - 1)
    if radicand < 0:
        raise BoundDomainError(f"bound radicand is negative ({radicand:.6g}); check constant_term")
    return float(max_perturbed_loss) + math.sqrt(radicand)


def bound_report(max_perturbed_loss: float, w_sq_norm: float, bp: BoundParams) -> BoundEvaluation:
    return BoundEvaluation(
        value=eval_bound(max_perturbed_loss, w_sq_norm, bp),
        max_perturbed_loss=max_perturbed_loss,
        w_sq_norm=w_sq_norm,
        rho=bp.radius,
        rho_source=bp.radius_source,
        n=bp.n,
        k=bp.k,
        delta=bp.delta,
        eta=bp.eta,
        constant_term=bp.constant_term,
    )
