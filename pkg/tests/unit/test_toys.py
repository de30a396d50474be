"""Unit tests for the closed-form oracles and the double-well experiment."""
import numpy as np
import pytest

from gcsam import (
    DoubleWellConfig,
    DoubleWellOracle,
    InvalidInputError,
    basin_selection_experiment,
    centralize_param_set,
    GcConfig,
    find_barrier,
    finite_diff_gradient,
    max_relative_error,
    perturbed_loss_profile,
)


def test_default_wells_are_asymmetric():
    config = DoubleWellConfig()
    assert config.loss_u(config.sharp_center) < config.loss_u(config.flat_center)
    assert config.flat_width >= 10 * config.sharp_width
    assert config.rho > config.sharp_width


def test_config_rejects_symmetric_wells():
    with pytest.raises(ValueError):
        DoubleWellConfig(sharp_depth=1.0, flat_depth=1.0)
    with pytest.raises(ValueError):
        DoubleWellConfig(flat_width=0.5)
    with pytest.raises(ValueError):
        DoubleWellConfig(rho=0.05)


def test_oracle_gradient_matches_finite_differences():
    oracle = DoubleWellOracle()
    for u in (-0.2, 0.05, 0.3, 1.5, 2.7):
        params = DoubleWellOracle.params_for(u, common=0.3)
        _, grads = oracle(params)
        numeric = finite_diff_gradient(lambda p: oracle.loss(p), params, h=1e-6)
        assert max_relative_error(grads, numeric.grads) <= 1e-5


def test_gradient_rows_are_already_centralized():
    """GC leaves double-well gradients unchanged, so SAM and GCSAM coincide."""
    _, grads = DoubleWellOracle()(DoubleWellOracle.params_for(0.4))
    _, report = centralize_param_set(grads, GcConfig())
    assert report.removed_sq_norm == pytest.approx(0.0, abs=1e-30)


def test_barrier_lies_between_centers():
    config = DoubleWellConfig()
    barrier = find_barrier(config)
    assert config.sharp_center < barrier < config.flat_center
    assert config.loss_u(barrier) > config.loss_u(config.sharp_center)


def test_perturbed_profile_prefers_flat_well():
    profile = perturbed_loss_profile(grid_points=401, ball_points=1000)
    assert profile.basin(profile.loss_argmin) == "sharp"
    assert profile.basin(profile.perturbed_argmin) == "flat"


def test_basin_experiment_separates_optimizers():
    seeds = list(range(10))
    sgd = basin_selection_experiment("sgd", seeds)
    sam = basin_selection_experiment("sam", seeds)
    gcsam = basin_selection_experiment("gcsam", seeds)
    assert sgd.sharp_fraction >= 0.5
    assert sam.flat_fraction >= 0.8
    assert gcsam.flat_fraction >= 0.8
    np.testing.assert_allclose(sam.terminal_u, gcsam.terminal_u, atol=1e-12)
    assert gcsam.centralization_changed_path is False
    assert sam.max_removed_sq_norm is None


def test_basin_experiment_rejects_adam():
    with pytest.raises(InvalidInputError):
        basin_selection_experiment("adam", [0])


def test_common_mode_term_gradient_matches_finite_differences():
    oracle = DoubleWellOracle(DoubleWellConfig(common_curvature=0.8))
    params = DoubleWellOracle.params_for(0.3, common=0.4)
    _, grads = oracle(params)
    numeric = finite_diff_gradient(lambda p: oracle.loss(p), params, h=1e-6)
    assert max_relative_error(grads, numeric.grads) <= 1e-5
    _, report = centralize_param_set(grads, GcConfig())
    assert report.removed_sq_norm > 0.0


def test_common_mode_term_separates_sam_and_gcsam_paths():
    """With a nonzero row mean in the gradient, centralization changes where GCSAM goes."""
    config = DoubleWellConfig(common_curvature=1.0, steps=200)
    seeds = list(range(5))
    sam = basin_selection_experiment("sam", seeds, config)
    gcsam = basin_selection_experiment("gcsam", seeds, config)
    assert gcsam.centralization_changed_path is True
    assert gcsam.max_removed_sq_norm > 0.0
    assert any(a != b for a, b in zip(sam.terminal_u, gcsam.terminal_u))
