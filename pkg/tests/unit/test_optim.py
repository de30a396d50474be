"""Unit tests for base optimizers and the SAM / GCSAM steps."""
import numpy as np
import pytest

from gcsam import (
    Adam,
    AdamConfig,
    ConfigError,
    CountingOracle,
    EvaluationError,
    NonFiniteGradientError,
    OptimizerState,
    ParamSet,
    QuadraticOracle,
    SamConfig,
    Sgd,
    SgdConfig,
    StepAbortedError,
    TrainingOptimizer,
    adam_step,
    compute_perturbation,
    gcsam_step,
    sam_step,
    sgd_step,
)
from gcsam.verification import trajectory_gap


def _params():
    return ParamSet({"w.weight": [[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]], "w.bias": [0.5, -0.5]})


def test_sgd_step_is_plain_gradient_descent():
    params = _params()
    grads = params.scale(0.5)
    new, state = sgd_step(params, grads, OptimizerState(), SgdConfig(lr=0.1))
    np.testing.assert_allclose(new.flatten(), params.flatten() * 0.95)
    assert state.step == 1
    assert "momentum" not in state.slots


def test_sgd_momentum_and_weight_decay():
    params = ParamSet({"w": [1.0]})
    cfg = SgdConfig(lr=0.1, momentum=0.5, weight_decay=0.1)
    grads = ParamSet({"w": [1.0]})
    p1, s1 = sgd_step(params, grads, OptimizerState(), cfg)
    # v1 = 1 + 0.1 * 1 = 1.1
    assert p1["w"].data[0] == pytest.approx(1.0 - 0.11)
    p2, s2 = sgd_step(p1, grads, s1, cfg)
    v2 = 0.5 * 1.1 + 1.0 + 0.1 * p1["w"].data[0]
    assert p2["w"].data[0] == pytest.approx(p1["w"].data[0] - 0.1 * v2)
    assert s2.step == 2


def test_adam_first_step_moves_by_lr():
    """With bias correction the first Adam step has magnitude ~lr per coordinate."""
    params = _params()
    grads = ParamSet.from_arrays({name: np.full(t.shape, 3.0) for name, t in params.items()})
    new, state = adam_step(params, grads, OptimizerState(), AdamConfig(lr=0.01))
    np.testing.assert_allclose((params - new).flatten(), 0.01, rtol=1e-6)
    assert set(state.slots) == {"m", "v"}


def test_optimizer_steps_do_not_mutate_inputs():
    params = _params()
    before = params.digest()
    sgd_step(params, params, OptimizerState(), SgdConfig())
    adam_step(params, params, OptimizerState(), AdamConfig())
    assert params.digest() == before


def test_non_finite_gradient_aborts_with_name():
    params = _params()
    grads = params.replace("w.bias", [np.nan, 0.0])
    with pytest.raises(NonFiniteGradientError) as exc:
        sgd_step(params, grads, OptimizerState(), SgdConfig())
    assert exc.value.name == "w.bias"


def test_perturbation_has_radius_rho(rng):
    grads = ParamSet({"a": rng.standard_normal((4, 4)), "b": rng.standard_normal(4)})
    eps = compute_perturbation(grads, SamConfig(rho=0.3))
    assert eps.norm() == pytest.approx(0.3, rel=1e-12)
    assert eps.dot(grads) > 0


def test_perturbation_worked_example():
    """g = [3, 4], rho = 0.1 gives eps = 0.1 * g / 5."""
    eps = compute_perturbation(ParamSet({"g": [3.0, 4.0]}), SamConfig(rho=0.1))
    np.testing.assert_allclose(eps["g"].data, [0.06, 0.08], rtol=1e-14)
    assert eps.norm() == pytest.approx(0.1, rel=1e-14)


def test_perturbation_zero_for_tiny_gradient():
    grads = ParamSet({"a": [[1e-14, 0.0]]})
    eps = compute_perturbation(grads, SamConfig(rho=0.3))
    assert eps.norm() == 0.0


def test_norm_order_other_than_two_rejected():
    with pytest.raises(ValueError):
        SamConfig(norm_order=1)


def test_sam_step_makes_two_oracle_calls():
    oracle = CountingOracle(QuadraticOracle(1.0))
    params = _params()
    _, _, telemetry = sam_step(params, None, oracle, Sgd(), OptimizerState(), SamConfig(rho=0.1))
    assert oracle.calls == 2
    assert telemetry.oracle_calls == 2
    assert telemetry.eps_norm == pytest.approx(0.1)
    assert telemetry.loss_perturbed > telemetry.loss_clean


def test_sam_uses_gradient_at_perturbed_point():
    """On L = 1/2 ||w||^2 the SAM update is w - lr * (w + eps)."""
    params = _params()
    cfg = SamConfig(rho=0.2)
    new, _, _ = sam_step(params, None, QuadraticOracle(1.0), Sgd(SgdConfig(lr=0.1)), OptimizerState(), cfg)
    eps = params.scale(0.2 / params.norm())
    expected = params - (params + eps).scale(0.1)
    np.testing.assert_allclose(new.flatten(), expected.flatten(), rtol=1e-12)


def test_gcsam_centralizes_ascent_and_descent():
    params = _params()
    _, _, telemetry = gcsam_step(
        params, None, QuadraticOracle(1.0), Sgd(), OptimizerState(), SamConfig(rho=0.1)
    )
    assert telemetry.gc_sq_norm <= telemetry.orig_sq_norm
    assert telemetry.ascent.tensors["w.weight"].removed_sq_norm > 0
    assert telemetry.descent is not None


def test_gcsam_constant_gradient_is_fixed_point():
    constant = ParamSet({"w.weight": np.full((3, 4), 0.7)})
    params = ParamSet({"w.weight": np.ones((3, 4))})
    new, _, telemetry = gcsam_step(
        params, None, lambda p, batch: (0.0, constant), Sgd(SgdConfig(lr=0.1)), OptimizerState(), SamConfig(rho=0.5)
    )
    assert telemetry.eps_norm == 0.0
    assert new.equals(params)


def test_gcsam_step_ignores_row_constant_gradient_shifts(rng):
    """Adding a per-row constant to a weight gradient leaves the GCSAM step unchanged."""
    grad = rng.standard_normal((3, 4))
    shift = rng.standard_normal((3, 1)) * np.ones((1, 4))
    params = ParamSet({"w.weight": np.ones((3, 4))})

    def step(g):
        fixed = ParamSet({"w.weight": g})
        return gcsam_step(
            params, None, lambda p, batch: (0.0, fixed), Sgd(SgdConfig(lr=0.1)), OptimizerState(), SamConfig(rho=0.2)
        )

    plain_params, _, plain = step(grad)
    shifted_params, _, shifted = step(grad + shift)
    assert shifted.eps_norm == pytest.approx(plain.eps_norm, rel=1e-12)
    np.testing.assert_allclose(shifted_params["w.weight"].data, plain_params["w.weight"].data, rtol=0, atol=1e-12)


def test_adam_converges_on_quadratic():
    """1000 Adam steps at lr 1e-2 on 1/2 ||w||^2 bring every coordinate below 1e-3."""
    params, state = ParamSet({"w": [1.0, -0.5, 0.25]}), OptimizerState()
    cfg = AdamConfig(lr=1e-2)
    for _ in range(1000):
        params, state = adam_step(params, params, state, cfg)
    assert np.max(np.abs(params["w"].data)) < 1e-3


def test_perturbed_oracle_failure_aborts_step():
    calls = []

    def oracle(params, batch):
        calls.append(1)
        if len(calls) == 2:
            raise EvaluationError("overflow")
        return 1.0, params

    params = _params()
    with pytest.raises(StepAbortedError):
        sam_step(params, None, oracle, Sgd(), OptimizerState(), SamConfig(rho=0.1))


@pytest.mark.parametrize("base", ["sgd", "adam"])
@pytest.mark.parametrize("wrapper", ["sam", "gcsam"])
def test_rho_zero_reduces_to_base_optimizer(base, wrapper):
    assert trajectory_gap(25, base, wrapper) <= 1e-12


def test_training_optimizer_call_counts():
    assert TrainingOptimizer("sgd", Sgd()).oracle_calls_per_step == 1
    assert TrainingOptimizer("sam", Adam(), SamConfig()).oracle_calls_per_step == 2
    assert TrainingOptimizer("gcsam", Sgd(), SamConfig()).oracle_calls_per_step == 2


def test_training_optimizer_rejects_inconsistent_setup():
    with pytest.raises(ConfigError):
        TrainingOptimizer("gcsam", Sgd())
    with pytest.raises(ConfigError):
        TrainingOptimizer("adam", Sgd())


def test_telemetry_row_has_csv_columns():
    optimizer = TrainingOptimizer("sgd", Sgd())
    params = _params()
    _, _, telemetry = optimizer.step(params, None, QuadraticOracle(1.0), optimizer.init_state(params))
    row = telemetry.csv_row()
    assert list(row) == ["step", "loss_clean", "loss_perturbed", "eps_norm", "orig_sq_norm", "gc_sq_norm", "step_wall_ns"]
    assert row["orig_sq_norm"] == row["gc_sq_norm"]
