"""Checkpoint I/O: a JSON manifest (name -> shape, byte offset) plus one flat
little-endian float64 blob. Round-trips are bit-exact."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


def save_checkpoint(params: dict[str, Tensor], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    offset = 0
    chunks = []
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        manifest[name] = {"shape": list(p.data.shape), "offset": offset}
        offset += len(raw)
        chunks.append(raw)
    (directory / WEIGHTS_NAME).write_bytes(b"".join(chunks))
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return directory


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    with open(directory / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    blob = (directory / WEIGHTS_NAME).read_bytes()
    out = {}
    for name, entry in manifest.items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out


def restore_params(params: dict[str, Tensor], directory) -> None:
    """Load a checkpoint into an existing parameter dict (shapes must match)."""
    loaded = load_checkpoint(directory)
    missing = set(params) ^ set(loaded)
    if missing:
        raise ValueError(f"checkpoint/architecture mismatch: {sorted(missing)}")
    for name, p in params.items():
        if loaded[name].shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: "
                             f"{loaded[name].shape} vs {p.data.shape}")
        p.data = loaded[name].copy()
