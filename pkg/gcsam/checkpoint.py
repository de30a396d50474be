"""
Checkpoint container.

A checkpoint is an uncompressed NumPy `.npz` archive. Each parameter is
stored as a float64 array under `param/<name>`; the entry `__meta__` holds a
UTF-8 JSON document:

    {"format_version": 1, "spec_hash": "<sha256>", "names": [...],
     "shapes": {"<name>": [rows, cols]}, "dtype": "float64"}

Archives are read with `allow_pickle=False`.
"""
import json
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .errors import CheckpointError
from .models import MlpSpec, init_params, spec_hash
from .tensor import ParamSet

__all__ = ["CHECKPOINT_VERSION", "save_checkpoint", "load_checkpoint", "read_checkpoint_meta"]

CHECKPOINT_VERSION = 1
_PREFIX = "param/"


def save_checkpoint(path: Union[str, Path], params: ParamSet, spec: MlpSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "spec_hash": spec_hash(spec),
        "names": list(params),
        "shapes": {name: list(t.shape) for name, t in params.items()},
        "dtype": "float64",
    }
    arrays = {f"{_PREFIX}{name}": np.ascontiguousarray(t.data, dtype=np.float64) for name, t in params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with path.open("wb") as handle:
        np.savez(handle, **arrays)
    return path


def read_checkpoint_meta(path: Union[str, Path]) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            return json.loads(archive["__meta__"].tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path} is not a readable checkpoint: {exc}") from exc


def load_checkpoint(path: Union[str, Path], spec: MlpSpec) -> ParamSet:
    """Load parameters and check them against `spec`; mismatches name the tensors."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('format_version')!r}")

    expected = init_params(spec).shapes()
    with np.load(path, allow_pickle=False) as archive:
        stored = {
            key[len(_PREFIX):]: np.array(archive[key], dtype=np.float64)
            for key in archive.files
            if key.startswith(_PREFIX)
        }

    problems: List[str] = []
    missing = [name for name in expected if name not in stored]
    unexpected = [name for name in stored if name not in expected]
    if missing:
        problems.append(f"missing tensors {missing}")
    if unexpected:
        problems.append(f"unexpected tensors {unexpected}")
    for name, shape in expected.items():
        if name in stored and stored[name].shape != shape:
            problems.append(f"tensor '{name}' has shape {stored[name].shape}, model expects {shape}")
    if problems:
        raise CheckpointError(f"{path} does not match the model spec: " + "; ".join(problems))
    if meta.get("spec_hash") != spec_hash(spec):
        raise CheckpointError(f"{path} was written for a different model spec (hash {str(meta.get('spec_hash'))[:12]})")
    return ParamSet.from_arrays({name: stored[name] for name in expected})
