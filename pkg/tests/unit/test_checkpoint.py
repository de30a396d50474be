"""Unit tests for the checkpoint container."""
import numpy as np
import pytest

from gcsam import (
    CheckpointError,
    MlpSpec,
    ParamSet,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
    spec_hash,
)


def test_save_and_load_is_bitwise(tmp_path, small_spec, small_params):
    path = save_checkpoint(tmp_path / "ckpt" / "checkpoint.npz", small_params, small_spec)
    loaded = load_checkpoint(path, small_spec)
    assert loaded.equals(small_params)
    assert list(loaded) == list(small_params)


def test_metadata_records_shapes_and_hash(tmp_path, small_spec, small_params):
    path = save_checkpoint(tmp_path / "checkpoint.npz", small_params, small_spec)
    meta = read_checkpoint_meta(path)
    assert meta["format_version"] == 1
    assert meta["spec_hash"] == spec_hash(small_spec)
    assert meta["shapes"]["layer0.weight"] == [4, 2]
    assert meta["dtype"] == "float64"


def test_init_seed_does_not_block_loading(tmp_path, small_spec, small_params):
    path = save_checkpoint(tmp_path / "checkpoint.npz", small_params, small_spec)
    other_seed = small_spec.model_copy(update={"seed": 42})
    assert load_checkpoint(path, other_seed).equals(small_params)


def test_shape_mismatch_names_tensors(tmp_path, small_spec, small_params):
    path = save_checkpoint(tmp_path / "checkpoint.npz", small_params, small_spec)
    wider = MlpSpec(layer_sizes=[2, 5, 2], seed=0)
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path, wider)
    assert "layer0.weight" in str(exc.value)
    assert "layer1.weight" in str(exc.value)


def test_missing_and_unexpected_tensors(tmp_path, small_spec):
    partial = ParamSet({"layer0.weight": np.zeros((4, 2)), "extra": np.zeros(3)})
    path = save_checkpoint(tmp_path / "checkpoint.npz", partial, small_spec)
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(path, small_spec)
    message = str(exc.value)
    assert "layer0.bias" in message
    assert "extra" in message


def test_architecture_change_with_same_shapes_is_rejected(tmp_path, small_spec, small_params):
    path = save_checkpoint(tmp_path / "checkpoint.npz", small_params, small_spec)
    tanh = small_spec.model_copy(update={"activation": "tanh"})
    with pytest.raises(CheckpointError, match="different model spec"):
        load_checkpoint(path, tanh)


def test_missing_or_corrupt_file(tmp_path, small_spec):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.npz", small_spec)
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not an archive")
    with pytest.raises(CheckpointError):
        load_checkpoint(junk, small_spec)
