"""
Golden-file check for the landscape CSV.

The fixture is a one-layer MSE model on four dyadic rows, sliced along the
first weight and the bias. Every cell is an exact binary fraction, so the
committed file can be checked by hand:

    L(a, b) = (2 (1/4 + a + b)^2 + b^2 + (1/4 - a + b)^2) / 4

Rebuild it deliberately with `python scripts/regenerate_golden.py`.
"""
from pathlib import Path

import numpy as np

from gcsam import (
    Batch,
    GridAxes,
    LandscapeGrid,
    MlpOracle,
    MlpSpec,
    ParamSet,
    load_checkpoint,
    sample_landscape,
    save_checkpoint,
)

GOLDEN_PATH = Path(__file__).resolve().parent / "landscape_small.csv"
GOLDEN_SPEC = MlpSpec(layer_sizes=[2, 1], loss="mse", seed=0)
GOLDEN_AXES = GridAxes(a_min=-0.5, a_max=0.5, a_steps=5, b_min=-0.5, b_max=0.5, b_steps=5)
GOLDEN_SEED = 3
GOLDEN_PARAMS = ParamSet({"layer0.weight": [[0.5, -0.25]], "layer0.bias": [0.25]})
GOLDEN_BATCH = Batch(
    np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]]),
    np.array([0.5, 0.0, 0.25, -1.0]),
)
# Unit steps along layer0.weight[0, 0] and along the bias
GOLDEN_DIRECTIONS = (
    ParamSet({"layer0.weight": [[1.0, 0.0]], "layer0.bias": [0.0]}),
    ParamSet({"layer0.weight": [[0.0, 0.0]], "layer0.bias": [1.0]}),
)


def build_golden_grid(workdir: Path) -> LandscapeGrid:
    """Round-trip the fixture weights through a checkpoint, then sample the slice."""
    checkpoint = save_checkpoint(workdir / "golden.npz", GOLDEN_PARAMS, GOLDEN_SPEC)
    params = load_checkpoint(checkpoint, GOLDEN_SPEC)
    return sample_landscape(
        MlpOracle(GOLDEN_SPEC), params, GOLDEN_AXES, GOLDEN_DIRECTIONS, GOLDEN_BATCH, seed=GOLDEN_SEED
    )


def test_landscape_matches_golden_file(tmp_path):
    produced = build_golden_grid(tmp_path).to_csv(tmp_path / "landscape.csv").read_bytes()
    assert produced == GOLDEN_PATH.read_bytes()


def test_golden_grid_matches_closed_form(tmp_path):
    grid = build_golden_grid(tmp_path)
    a, b = np.meshgrid(grid.a_values, grid.b_values, indexing="ij")
    expected = (2 * (0.25 + a + b) ** 2 + b ** 2 + (0.25 - a + b) ** 2) / 4
    np.testing.assert_array_equal(grid.losses, expected)
    assert grid.center_loss == 0.046875
