"""Model checkpoints: JSON manifest plus one float64 little-endian blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from cascadet.neuralkit.layers import Module

_DTYPE = np.dtype("<f8")


def save_checkpoint(model: Module, hyper: dict, path: str | Path) -> Path:
    """Write <path>.json and <path>.bin; returns the manifest path."""
    path = Path(path)
    state = model.state_arrays()
    names = sorted(state)
    manifest = {
        "hyper": hyper,
        "params": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    blob = np.concatenate([state[n].reshape(-1) for n in names]) if names else np.empty(0)
    blob.astype(_DTYPE).tofile(path.with_suffix(".bin"))
    return manifest_path


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read (hyper, name -> array) from a checkpoint pair."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path.with_suffix(".bin"), dtype=_DTYPE)
    state: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        state[entry["name"]] = raw[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != raw.shape[0]:
        raise ValueError(
            f"checkpoint blob has {raw.shape[0]} values, manifest expects {offset}"
        )
    return manifest["hyper"], state
