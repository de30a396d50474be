"""Unit tests for dataset generators, CSV ingestion, batching and splits."""
import numpy as np
import pytest

from gcsam import (
    IngestionError,
    InvalidInputError,
    SplitSpec,
    gen_gaussian_blobs,
    gen_two_moons,
    load_csv,
    minibatches,
    split_dataset,
    write_csv,
)
from tests.fixtures import CSV_BAD_CELL, CSV_CLASSIFICATION, CSV_FRACTIONAL_LABEL, CSV_REGRESSION


def test_two_moons_is_deterministic():
    a = gen_two_moons(100, 0.2, seed=3)
    b = gen_two_moons(100, 0.2, seed=3)
    assert a.equals(b)
    assert not a.equals(gen_two_moons(100, 0.2, seed=4))
    assert a.features.shape == (100, 2)
    assert set(np.unique(a.labels)) == {0, 1}
    assert a.provenance.seed == 3


def test_two_moons_without_noise_lies_on_arcs():
    data = gen_two_moons(50, 0.0, seed=0)
    upper = data.features[data.labels == 0]
    np.testing.assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0, atol=1e-12)


def test_generators_validate_inputs():
    with pytest.raises(InvalidInputError):
        gen_two_moons(1, 0.2, seed=0)
    with pytest.raises(InvalidInputError):
        gen_two_moons(10, -0.1, seed=0)
    with pytest.raises(InvalidInputError):
        gen_gaussian_blobs(2, [[0, 0], [1, 1], [2, 2]], 1.0, seed=0)


def test_blobs_have_one_class_per_center():
    data = gen_gaussian_blobs(90, [[0, 0], [5, 5], [-5, 5]], 0.5, seed=1)
    assert data.num_classes == 3
    assert np.bincount(data.labels).tolist() == [30, 30, 30]


def test_dataset_arrays_are_read_only(moons):
    with pytest.raises(ValueError):
        moons.features[0, 0] = 1.0


def test_load_csv_classification(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_CLASSIFICATION, encoding="utf-8")
    data = load_csv(path, "label")
    assert data.feature_names == ("x0", "x1")
    assert data.labels.tolist() == [0, 1, 1, 0]
    np.testing.assert_array_equal(data.features[2], [3.5, -0.75])
    assert data.provenance.source == "csv"
    assert len(data.provenance.sha256) == 64


def test_load_csv_regression_label_first(tmp_path):
    path = tmp_path / "reg.csv"
    path.write_text(CSV_REGRESSION, encoding="utf-8")
    data = load_csv(path, "y", task="regression")
    assert data.feature_names == ("a", "b")
    assert data.labels.dtype == np.float64
    assert data.labels.tolist() == [1.5, -2.25, 0.125]


def test_missing_label_column_lists_available(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text(CSV_CLASSIFICATION, encoding="utf-8")
    with pytest.raises(IngestionError) as exc:
        load_csv(path, "target")
    assert exc.value.available == ["x0", "x1", "label"]


def test_bad_cell_reports_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(CSV_BAD_CELL, encoding="utf-8")
    with pytest.raises(IngestionError) as exc:
        load_csv(path, "label")
    assert (exc.value.row, exc.value.column) == (1, 1)


@pytest.mark.parametrize("cell", ["1_0", " 1.0", "1.0 ", "nan", "-inf", "1e999", "0x10", ""])
def test_only_plain_finite_decimals_are_accepted(tmp_path, cell):
    path = tmp_path / "cells.csv"
    path.write_text(f"x0,x1,label\n0.5,1.25,0\n-1.0,{cell},1\n", encoding="utf-8")
    with pytest.raises(InvalidInputError) as exc:
        load_csv(path, "label")
    assert (exc.value.row, exc.value.column) == (1, 1)


def test_signed_and_exponent_forms_parse(tmp_path):
    path = tmp_path / "forms.csv"
    path.write_text("x0,x1,label\n+1.5,-.25,0\n2.,1E-3,1\n", encoding="utf-8")
    dataset = load_csv(path, "label")
    np.testing.assert_array_equal(dataset.features, [[1.5, -0.25], [2.0, 0.001]])


def test_fractional_class_label_rejected(tmp_path):
    path = tmp_path / "frac.csv"
    path.write_text(CSV_FRACTIONAL_LABEL, encoding="utf-8")
    with pytest.raises(IngestionError) as exc:
        load_csv(path, "label")
    assert exc.value.row == 0


def test_csv_export_reloads_exactly(tmp_path, moons):
    path = write_csv(moons, tmp_path / "moons.csv")
    assert load_csv(path, "label").equals(moons)


def test_minibatches_cover_every_row_once(moons):
    batches = list(minibatches(moons, 64, seed=0))
    assert [len(b.labels) for b in batches] == [64, 64, 64, 8]
    rows = np.concatenate([b.features for b in batches])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, moons.features))


def test_minibatch_order_depends_on_seed_and_epoch(moons):
    first = next(minibatches(moons, 16, seed=0, epoch=0)).features
    assert np.array_equal(first, next(minibatches(moons, 16, seed=0, epoch=0)).features)
    assert not np.array_equal(first, next(minibatches(moons, 16, seed=0, epoch=1)).features)
    unshuffled = next(minibatches(moons, 16, seed=0, shuffle=False)).features
    np.testing.assert_array_equal(unshuffled, moons.features[:16])


def test_batch_size_validated(moons):
    with pytest.raises(InvalidInputError):
        list(minibatches(moons, 0, seed=0))
    with pytest.raises(InvalidInputError):
        list(minibatches(moons, len(moons) + 1, seed=0))


def test_split_is_seeded_partition(moons):
    train, test = split_dataset(moons, SplitSpec(test_fraction=0.25, seed=7))
    assert (len(train), len(test)) == (150, 50)
    again_train, _ = split_dataset(moons, SplitSpec(test_fraction=0.25, seed=7))
    assert train.equals(again_train)
    combined = np.concatenate([train.features, test.features])
    assert sorted(map(tuple, combined)) == sorted(map(tuple, moons.features))
