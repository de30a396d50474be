"""
Property suites run by `gcsam verify`.

Each suite returns a SuiteResult instead of raising, so one failure does not
hide the others. `quick=True` shrinks every corpus for a fast smoke run.
"""
import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .analysis import BoundParams, GridAxes, eval_bound, orthogonal_gaussian_directions, sample_landscape
from .centralization import GcConfig, centralize_matrix, projection_idempotence_residual
from .errors import InvalidInputError
from .data import gen_two_moons, minibatches
from .models import MlpOracle, MlpSpec, init_params, loss_and_grad, batch_loss, preactivations
from .optim import (
    Adam,
    AdamConfig,
    OptimizerState,
    SamConfig,
    Sgd,
    SgdConfig,
    compute_perturbation,
    gcsam_step,
    sam_step,
)
from .tensor import ParamSet, finite_diff_gradient, max_relative_error
from .toys import DoubleWellConfig, QuadraticOracle, basin_selection_experiment, perturbed_loss_profile

logger = logging.getLogger(__name__)

__all__ = [
    "SuiteResult",
    "SuiteFailure",
    "SUITES",
    "run_suites",
    "random_gradient_matrices",
    "random_mlp_case",
    "trajectory_gap",
]


class SuiteResult(BaseModel):
    name: str
    passed: bool
    detail: str
    seconds: float


class SuiteFailure(Exception):
    pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SuiteFailure(message)


def random_gradient_matrices(count: int, max_dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        rows, cols = rng.integers(1, max_dim + 1, size=2)
        yield rng.standard_normal((int(rows), int(cols)))


def _norm_identity(quick: bool) -> str:
    cfg = GcConfig()
    count, max_dim = (100, 32) if quick else (1000, 256)
    worst = 0.0
    for g in random_gradient_matrices(count, max_dim, seed=1):
        _, report = centralize_matrix(g, cfg)
        expected = report.orig_sq_norm - report.removed_sq_norm
        worst = max(worst, abs(report.gc_sq_norm - expected) / max(report.orig_sq_norm, 1e-300))
        _require(report.gc_sq_norm <= report.orig_sq_norm * (1 + 1e-12), "centralized norm exceeds original")
    _require(worst <= 1e-10, f"norm identity off by {worst:.3g} relative")
    return f"{count} matrices, worst relative gap {worst:.2e}"


def _projection_algebra(quick: bool) -> str:
    cfg = GcConfig()
    count, max_dim = (100, 32) if quick else (1000, 256)
    worst_idem = worst_mean = 0.0
    for g in random_gradient_matrices(count, max_dim, seed=2):
        worst_idem = max(worst_idem, projection_idempotence_residual(g, cfg))
        centered, _ = centralize_matrix(g, cfg)
        worst_mean = max(worst_mean, float(np.max(np.abs(centered.data.sum(axis=1)))))
    _require(worst_idem <= 1e-12, f"idempotence residual {worst_idem:.3g}")
    _require(worst_mean <= 1e-12, f"column sum {worst_mean:.3g}")
    return f"idempotence {worst_idem:.2e}, column sums {worst_mean:.2e}"


def random_mlp_case(rng: np.random.Generator, activation: str, loss: str, kink_margin: float = 1e-4):
    """A small random MLP, parameters and batch with no relu pre-activation near its kink."""
    while True:
        depth = int(rng.integers(1, 3))
        sizes = [int(rng.integers(2, 5)) for _ in range(depth + 1)] + [int(rng.integers(2, 4))]
        spec = MlpSpec(layer_sizes=sizes, activation=activation, loss=loss, seed=int(rng.integers(0, 2 ** 31)))
        params = init_params(spec)
        features = rng.standard_normal((6, sizes[0]))
        labels = rng.integers(0, sizes[-1], size=6)
        if activation == "relu":
            pre = preactivations(spec, params, features)
            if any(np.min(np.abs(z)) < kink_margin for z in pre):
                continue
        return spec, params, (features, labels)


def _gradient_check(quick: bool) -> str:
    rng = np.random.default_rng(3)
    count = 12 if quick else 100
    worst = 0.0
    for i in range(count):
        activation = ("relu", "tanh")[i % 2]
        loss = ("softmax_xent", "mse")[(i // 2) % 2]
        spec, params, batch = random_mlp_case(rng, activation, loss)
        _, exact = loss_and_grad(spec, params, batch)
        numeric = finite_diff_gradient(lambda p: batch_loss(spec, p, batch), params, h=1e-6)
        worst = max(worst, max_relative_error(exact, numeric.grads))
    _require(worst <= 1e-5, f"gradient check relative error {worst:.3g}")
    return f"{count} networks, worst relative error {worst:.2e}"


def trajectory_gap(steps: int, base_kind: str, wrapper: str) -> float:
    """Max per-coordinate gap between a rho=0 wrapper trajectory and its base optimizer."""
    data = gen_two_moons(200, 0.2, seed=0)
    spec = MlpSpec(layer_sizes=[2, 8, 2], seed=0)
    oracle = MlpOracle(spec)
    base = Sgd(SgdConfig(lr=0.1, momentum=0.9)) if base_kind == "sgd" else Adam(AdamConfig(lr=1e-2))
    sam_cfg = SamConfig(rho=0.0, centralize_ascent=False, centralize_descent=False)
    step = sam_step if wrapper == "sam" else gcsam_step

    plain = wrapped = init_params(spec)
    plain_state = wrapped_state = OptimizerState()
    done, epoch = 0, 0
    while done < steps:
        for batch in minibatches(data, 32, seed=0, epoch=epoch):
            _, grads = oracle(plain, batch)
            plain, plain_state = base.step(plain, grads, plain_state)
            wrapped, wrapped_state, _ = step(wrapped, batch, oracle, base, wrapped_state, sam_cfg)
            done += 1
            if done == steps:
                break
        epoch += 1
    return float(np.max(np.abs((plain - wrapped).flatten())))


def _rho_zero_reduction(quick: bool) -> str:
    steps = 20 if quick else 100
    gaps = {
        f"{wrapper}/{base}": trajectory_gap(steps, base, wrapper)
        for base in ("sgd", "adam")
        for wrapper in ("sam", "gcsam")
    }
    worst = max(gaps.values())
    _require(worst <= 1e-12, f"trajectories diverge: {gaps}")
    return f"{steps} steps, worst gap {worst:.2e}"


def _perturbation_contract(quick: bool) -> str:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50 if quick else 500):
        rho = float(rng.uniform(1e-3, 2.0))
        grads = ParamSet({"a.weight": rng.standard_normal((3, 4)), "a.bias": rng.standard_normal(3)})
        eps = compute_perturbation(grads, SamConfig(rho=rho))
        worst = max(worst, abs(eps.norm() - rho) / rho)
    _require(worst <= 1e-12, f"perturbation norm off by {worst:.3g} relative")

    constant = ParamSet({"w.weight": np.full((3, 4), 0.7)})
    params = ParamSet({"w.weight": np.ones((3, 4))})
    new, _, telemetry = gcsam_step(
        params, None, lambda p, batch: (0.0, constant), Sgd(SgdConfig(lr=0.1)), OptimizerState(), SamConfig(rho=0.5)
    )
    _require(telemetry.eps_norm == 0.0, "constant gradient produced a nonzero perturbation")
    _require(new.equals(params), "constant gradient moved the weights")
    return f"worst norm error {worst:.2e}; constant-gradient case is a fixed point"


def _flat_minimum(quick: bool) -> str:
    config = DoubleWellConfig()
    profile = perturbed_loss_profile(config, grid_points=401 if quick else 2001, ball_points=1000 if quick else 10_000)
    _require(profile.basin(profile.loss_argmin) == "sharp", "the sharp well is not the deeper one")
    _require(profile.basin(profile.perturbed_argmin) == "flat", "the perturbed loss does not prefer the flat well")
    seeds = list(range(10 if quick else 50))
    sgd = basin_selection_experiment("sgd", seeds, config)
    sam = basin_selection_experiment("sam", seeds, config)
    gcsam = basin_selection_experiment("gcsam", seeds, config)
    _require(sam.flat_fraction >= 0.8, f"sam flat fraction {sam.flat_fraction:.2f}")
    _require(gcsam.flat_fraction >= 0.8, f"gcsam flat fraction {gcsam.flat_fraction:.2f}")
    _require(sgd.sharp_fraction >= 0.5, f"sgd sharp fraction {sgd.sharp_fraction:.2f}")
    same_path = ""
    if not gcsam.centralization_changed_path:
        same_path = " (gradients already centralized: gcsam path identical to sam)"
    return (
        f"flat: sam {sam.flat_fraction:.0%}, gcsam {gcsam.flat_fraction:.0%}{same_path}; "
        f"sharp: sgd {sgd.sharp_fraction:.0%} over {len(seeds)} seeds"
    )


def _landscape(quick: bool) -> str:
    spec = MlpSpec(layer_sizes=[2, 4, 2], seed=0)
    params = init_params(spec)
    worst_dot = 0.0
    for seed in range(10 if quick else 100):
        d1, d2 = orthogonal_gaussian_directions(params, seed)
        worst_dot = max(worst_dot, abs(d1.dot(d2)))
    _require(worst_dot <= 1e-10, f"directions not orthogonal: {worst_dot:.3g}")

    data = gen_two_moons(64, 0.1, seed=0)
    oracle = MlpOracle(spec)
    axes = GridAxes(a_steps=5, b_steps=5)
    grid = sample_landscape(oracle, params, axes, orthogonal_gaussian_directions(params, 0), data)
    ci, cj = axes.center_index()
    _require(grid.losses[ci, cj] == oracle.loss(params, data), "center cell differs from the base loss")

    zero = ParamSet({"w": np.zeros(6)})
    quad = sample_landscape(QuadraticOracle(1.0), zero, GridAxes(), orthogonal_gaussian_directions(zero, 7), None)
    a, b = np.meshgrid(quad.a_values, quad.b_values, indexing="ij")
    quad_gap = float(np.max(np.abs(quad.losses - 0.5 * (a ** 2 + b ** 2))))
    _require(quad_gap <= 1e-10, f"quadratic grid off by {quad_gap:.3g}")
    return f"orthogonality {worst_dot:.2e}, quadratic gap {quad_gap:.2e}"


def _bound(quick: bool) -> str:
    n, delta = 1000, 0.05
    bp = BoundParams(n=n, k=100, delta=delta, eta=1.0, rho=0.05)
    hand = 0.3 + math.sqrt(4 * math.log(n / delta) / (n - 1))
    gap = abs(eval_bound(0.3, 0.0, bp) - hand)
    _require(gap <= 1e-12, f"zero-weight case off by {gap:.3g}")
    _require(eval_bound(0.3, 1.0, bp) < eval_bound(0.3, 4.0, bp), "bound not increasing in ||w||^2")
    values = [eval_bound(0.3, 1.0, bp.model_copy(update={"n": size})) for size in (100, 1000, 10000)]
    _require(values[0] > values[1] > values[2], f"bound not decreasing in n: {values}")
    return "closed form and monotonicity hold"


SUITES: Dict[str, Callable[[bool], str]] = {
    "norm_identity": _norm_identity,
    "projection_algebra": _projection_algebra,
    "gradient_check": _gradient_check,
    "rho_zero_reduction": _rho_zero_reduction,
    "perturbation_contract": _perturbation_contract,
    "flat_minimum": _flat_minimum,
    "landscape": _landscape,
    "bound": _bound,
}


def run_suites(quick: bool = False, names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    selected = list(names) if names else list(SUITES)
    unknown = [name for name in selected if name not in SUITES]
    if unknown:
        raise InvalidInputError(f"unknown suites: {', '.join(unknown)}")
    results = []
    for name in selected:
        started = time.perf_counter()
        try:
            detail = SUITES[name](quick)
            passed = True
        except SuiteFailure as exc:
            detail, passed = str(exc), False
        except Exception as exc:  # noqa: BLE001
            logger.exception("Suite %s raised", name)
            detail, passed = f"{type(exc).__name__}: {exc}", False
        results.append(SuiteResult(name=name, passed=passed, detail=detail, seconds=time.perf_counter() - started))
    return results
