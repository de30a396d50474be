"""Unit tests for the sharpness estimator, landscape sampling and the bound."""
import math

import numpy as np
import pytest

from gcsam import (
    BoundDomainError,
    BoundParams,
    GridAxes,
    InvalidInputError,
    LinearOracle,
    MlpOracle,
    ParamSet,
    QuadraticOracle,
    bound_report,
    estimate_sharpness,
    eval_bound,
    orthogonal_gaussian_directions,
    radius_ladder,
    sample_landscape,
)


def test_sharpness_of_linear_loss_is_rho_times_gradient_norm():
    """For L = c.w the maximum over the ball is exactly rho * ||c||."""
    c = ParamSet({"w": [[3.0, 4.0]]})
    params = ParamSet({"w": [[0.5, -1.0]]})
    estimate = estimate_sharpness(LinearOracle(c), params, None, rho=0.1, m=4, ascent_steps=2, seed=0)
    assert estimate.estimate == pytest.approx(0.5, rel=1e-12)
    assert estimate.max_perturbed_loss == pytest.approx(estimate.base_loss + 0.5)
    assert not estimate.partial
    assert [r.start for r in estimate.records].count("gradient") == 1


def test_sharpness_of_quadratic_at_minimum():
    """At w = 0 on 1/2 lambda ||w||^2 the gain is 1/2 lambda rho^2 along any direction."""
    params = ParamSet({"w": np.zeros((2, 3))})
    estimate = estimate_sharpness(QuadraticOracle(2.0), params, None, rho=0.05, m=8, ascent_steps=0, seed=1)
    assert estimate.estimate == pytest.approx(0.5 * 2.0 * 0.05 ** 2, rel=1e-12)
    assert all(r.start == "random" for r in estimate.records)


def test_sharpness_is_deterministic(small_spec, small_params, moons):
    oracle = MlpOracle(small_spec)
    a = estimate_sharpness(oracle, small_params, moons, rho=0.05, m=4, ascent_steps=1, seed=3)
    b = estimate_sharpness(oracle, small_params, moons, rho=0.05, m=4, ascent_steps=1, seed=3)
    assert a.model_dump() == b.model_dump()
    assert a.estimate >= 0


def test_sharpness_records_failed_starts():
    class Fragile(QuadraticOracle):
        def __call__(self, params, batch=None):
            if params["w"].data[0, 0] > 0.01:
                raise ArithmeticError("overflow")
            return super().__call__(params, batch)

    params = ParamSet({"w": np.zeros((1, 2))})
    estimate = estimate_sharpness(Fragile(1.0), params, None, rho=0.1, m=16, ascent_steps=0, seed=0)
    assert estimate.partial
    assert any(r.failed and "overflow" in r.error for r in estimate.records)
    assert estimate.estimate is not None


def test_sharpness_validates_arguments(small_params):
    with pytest.raises(InvalidInputError):
        estimate_sharpness(QuadraticOracle(), small_params, None, rho=0.0, m=4, ascent_steps=0, seed=0)


class _PlaneOracle:
    """Scalar function of a single two-element tensor 'w', with its gradient."""

    def __init__(self, fn, grad):
        self.fn, self.grad = fn, grad

    def __call__(self, params, batch=None):
        x, y = params["w"].data
        return float(self.fn(x, y)), ParamSet({"w": self.grad(x, y)})


def _wavy(x, y):
    return np.sin(3 * x) * np.cos(2 * y) + 0.3 * x ** 2


def _wavy_grad(x, y):
    return [3 * np.cos(3 * x) * np.cos(2 * y) + 0.6 * x, -2 * np.sin(3 * x) * np.sin(2 * y)]


def test_radius_ladder_halves_down_to_floor():
    assert radius_ladder(0.08, 0.01) == [0.08, 0.04, 0.02, 0.01]
    assert radius_ladder(0.16, 0.01)[1:] == radius_ladder(0.08, 0.01)
    assert radius_ladder(0.005, 0.01) == [0.005]
    with pytest.raises(InvalidInputError):
        radius_ladder(0.1, 0.0)


def test_sharpness_never_decreases_when_rho_doubles():
    """Same seed: the estimate at 2*rho is at least the estimate at rho."""
    oracle = _PlaneOracle(_wavy, _wavy_grad)
    points = np.random.default_rng(7).uniform(-1.0, 1.0, size=(20, 2))
    for point in points:
        params = ParamSet({"w": point})
        estimates = [
            estimate_sharpness(oracle, params, None, rho=rho, m=4, ascent_steps=5, seed=2).estimate
            for rho in (0.15, 0.3, 0.6, 1.2)
        ]
        assert all(larger >= smaller for smaller, larger in zip(estimates, estimates[1:])), (point, estimates)


def test_sharpness_reports_radius_of_best_gain():
    c = ParamSet({"w": [[3.0, 4.0]]})
    params = ParamSet({"w": [[0.0, 0.0]]})
    estimate = estimate_sharpness(LinearOracle(c), params, None, rho=0.1, m=2, ascent_steps=1, seed=0)
    assert estimate.radii == radius_ladder(0.1)
    gradient_start = next(r for r in estimate.records if r.start == "gradient")
    assert gradient_start.radius == 0.1
    assert gradient_start.oracle_calls == 2 * len(estimate.radii)


def test_sharpness_close_to_brute_force_in_one_dimension():
    """Within 95% of a 10^4-point scan of the interval, never above it."""

    def f(w):
        return np.cosh(w) - 1.0 + 0.3 * w ** 3

    class Oracle:
        def __call__(self, params, batch=None):
            w = params["w"].data
            return float(f(w[0])), ParamSet({"w": np.sinh(w) + 0.9 * w ** 2})

    center, rho = 0.1, 0.5
    brute = float(np.max(f(center + np.linspace(-rho, rho, 10_000)))) - f(center)
    estimate = estimate_sharpness(Oracle(), ParamSet({"w": [center]}), None, rho=rho, m=64, ascent_steps=5, seed=0)
    assert estimate.estimate >= 0.95 * brute
    assert estimate.estimate <= brute + 1e-9


def test_sharpness_close_to_brute_force_in_two_dimensions():
    """Within 95% of a 100 x 100 polar scan of the disc, never above the boundary maximum."""

    def f(x, y):
        return 0.5 * (3.0 * x ** 2 + y ** 2) + 0.2 * x * y

    oracle = _PlaneOracle(f, lambda x, y: [3.0 * x + 0.2 * y, y + 0.2 * x])
    center, rho = np.array([0.2, -0.1]), 0.3
    base = f(*center)
    radii, angles = np.meshgrid(np.linspace(0.0, rho, 100), np.linspace(0.0, 2 * np.pi, 100, endpoint=False))
    brute = float(np.max(f(center[0] + radii * np.cos(angles), center[1] + radii * np.sin(angles)))) - base
    # Convex, so the maximum over the disc sits on its boundary.
    ring = np.linspace(0.0, 2 * np.pi, 200_000, endpoint=False)
    exact = float(np.max(f(center[0] + rho * np.cos(ring), center[1] + rho * np.sin(ring)))) - base
    estimate = estimate_sharpness(oracle, ParamSet({"w": center}), None, rho=rho, m=64, ascent_steps=5, seed=0)
    assert estimate.estimate >= 0.95 * brute
    assert estimate.estimate <= exact + 1e-6


@pytest.mark.parametrize("normalization", ["raw", "per_layer"])
def test_directions_are_orthogonal(small_params, normalization):
    for seed in range(20):
        d1, d2 = orthogonal_gaussian_directions(small_params, seed, normalization)
        if normalization == "raw":
            assert abs(d1.dot(d2)) <= 1e-10
            assert d1.norm() == pytest.approx(1.0)
        else:
            for name in small_params:
                assert abs(float(np.vdot(d1[name].data, d2[name].data))) <= 1e-10


def test_directions_are_seeded(small_params):
    a = orthogonal_gaussian_directions(small_params, 5)
    b = orthogonal_gaussian_directions(small_params, 5)
    assert a[0].equals(b[0]) and a[1].equals(b[1])


def test_per_layer_directions_have_unit_norm_per_tensor(small_params):
    """per_layer gives every tensor of both directions unit norm; the weights do not set the scale."""
    d1, d2 = orthogonal_gaussian_directions(small_params, 4, "per_layer")
    for name in small_params:
        assert np.linalg.norm(d1[name].data) == pytest.approx(1.0)
        assert np.linalg.norm(d2[name].data) == pytest.approx(1.0)
    doubled, _ = orthogonal_gaussian_directions(small_params.scale(2.0), 4, "per_layer")
    assert doubled.equals(d1)


def test_grid_axes_must_contain_zero():
    with pytest.raises(ValueError):
        GridAxes(a_min=0.5, a_max=1.0)
    with pytest.raises(ValueError):
        GridAxes(a_min=-1.0, a_max=1.0, a_steps=4)
    axes = GridAxes(a_min=-0.3, a_max=0.6, a_steps=4, b_steps=3)
    assert axes.center_index() == (1, 1)
    assert axes.values("a")[1] == 0.0


def test_quadratic_landscape_matches_closed_form():
    zero = ParamSet({"w": np.zeros((3, 2))})
    grid = sample_landscape(QuadraticOracle(1.0), zero, GridAxes(), orthogonal_gaussian_directions(zero, 7), None)
    a, b = np.meshgrid(grid.a_values, grid.b_values, indexing="ij")
    np.testing.assert_allclose(grid.losses, 0.5 * (a ** 2 + b ** 2), atol=1e-10)


def test_quadratic_landscape_is_point_symmetric():
    """Around the minimum of a quadratic, L(a, b) == L(-a, -b) on symmetric axes."""
    zero = ParamSet({"w": np.zeros((2, 2)), "b": np.zeros(2)})
    oracle = QuadraticOracle({"w": [[1.0, 2.0], [3.0, 4.0]], "b": [0.5, 5.0]})
    directions = orthogonal_gaussian_directions(zero, 9)
    grid = sample_landscape(oracle, zero, GridAxes(a_steps=11, b_steps=7), directions, None)
    np.testing.assert_allclose(grid.losses, grid.losses[::-1, ::-1], rtol=1e-9, atol=1e-15)
    assert grid.losses[5, 3] == 0.0


def test_landscape_center_is_exact(small_spec, small_params, moons):
    oracle = MlpOracle(small_spec)
    axes = GridAxes(a_steps=5, b_steps=3)
    grid = sample_landscape(oracle, small_params, axes, orthogonal_gaussian_directions(small_params, 0), moons)
    assert grid.losses[axes.center_index()] == oracle.loss(small_params, moons)
    assert grid.shape == (5, 3)


def test_landscape_threads_match_serial(small_spec, small_params, moons):
    oracle = MlpOracle(small_spec)
    axes = GridAxes(a_steps=5, b_steps=5)
    directions = orthogonal_gaussian_directions(small_params, 2)
    serial = sample_landscape(oracle, small_params, axes, directions, moons)
    threaded = sample_landscape(oracle, small_params, axes, directions, moons, workers=4)
    np.testing.assert_array_equal(serial.losses, threaded.losses)


def test_landscape_csv_layout(tmp_path, small_params):
    zero = ParamSet({"w": np.zeros((2, 2))})
    grid = sample_landscape(
        QuadraticOracle(1.0), zero, GridAxes(a_steps=3, b_steps=3), orthogonal_gaussian_directions(zero, 1), None
    )
    text = grid.to_csv(tmp_path / "landscape.csv").read_text(encoding="utf-8")
    lines = text.splitlines()
    assert lines[0] == "a,b,loss"
    assert len(lines) == 10
    assert lines[5] == "0,0,0"


def test_bound_zero_weight_closed_form():
    n, delta = 1000, 0.05
    bp = BoundParams(n=n, k=100, delta=delta, eta=1.0, rho=0.05)
    expected = 0.3 + math.sqrt(4 * math.log(n / delta) / (n - 1))
    assert abs(eval_bound(0.3, 0.0, bp) - expected) <= 1e-12


def test_bound_monotonicity():
    bp = BoundParams(n=1000, k=100, delta=0.05, eta=1.0, rho=0.05)
    assert eval_bound(0.3, 1.0, bp) < eval_bound(0.3, 2.0, bp)
    values = [eval_bound(0.3, 1.0, bp.model_copy(update={"n": n})) for n in (100, 1000, 10000)]
    assert values[0] > values[1] > values[2]


def test_bound_decreases_as_delta_grows():
    values = [
        eval_bound(0.3, 1.0, BoundParams(n=1000, k=100, delta=delta, eta=1.0, rho=0.05))
        for delta in (0.01, 0.05, 0.2, 0.5)
    ]
    assert all(later < earlier for earlier, later in zip(values, values[1:]))


def test_bound_negative_radicand():
    bp = BoundParams(n=100, k=10, delta=0.05, eta=1.0, rho=0.05, constant_term=-1e6)
    with pytest.raises(BoundDomainError):
        eval_bound(0.3, 1.0, bp)


def test_bound_radius_from_sigma():
    bp = BoundParams(n=400, k=100, delta=0.05, eta=1.0, sigma=0.2)
    expected = math.sqrt(100) * 0.2 * (1 + math.sqrt(math.log(400) / 100)) / 400
    assert bp.radius == pytest.approx(expected)
    report = bound_report(0.1, 1.0, bp)
    assert report.rho_source == "sigma"
    assert report.label == "diagnostic"


def test_bound_needs_exactly_one_radius():
    with pytest.raises(ValueError):
        BoundParams(n=100, k=10, delta=0.05, eta=1.0)
    with pytest.raises(ValueError):
        BoundParams(n=100, k=10, delta=0.05, eta=1.0, rho=0.1, sigma=0.1)
