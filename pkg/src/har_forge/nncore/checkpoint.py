"""Checkpoint files: a JSON manifest plus a flat little-endian float64 blob.

The blob holds every parameter, raveled in C order, in the manifest's
``params`` order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IoError, ShapeMismatch
from .model import Sequential

FORMAT = "har-forge-checkpoint/1"


def checkpoint_paths(stem):
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")


def save_checkpoint(model: Sequential, stem, epoch=None, meta=None):
    manifest_path, blob_path = checkpoint_paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    manifest = {
        "format": FORMAT,
        "layers": [s.to_dict() for s in model.layer_specs],
        "input_shape": list(model.input_shape),
        "loss": model.loss,
        "seed": model.seed,
        "epoch": epoch,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "meta": meta or {},
    }
    flat = np.concatenate([v.ravel() for v in params.values()]) if params else np.empty(0)
    flat.astype("<f8").tofile(blob_path)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path, blob_path


def load_checkpoint(stem):
    """Rebuild the model from a checkpoint; returns ``(model, manifest)``."""
    manifest_path, blob_path = checkpoint_paths(stem)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        flat = np.fromfile(blob_path, dtype="<f8")
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise IoError(f"{manifest_path}: unsupported checkpoint format {manifest.get('format')!r}")
    model = Sequential(manifest["layers"], manifest["input_shape"], manifest["loss"], manifest["seed"])
    values, offset = {}, 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        if offset + size > len(flat):
            raise ShapeMismatch(f"{blob_path} is shorter than its manifest")
        values[entry["name"]] = flat[offset : offset + size].astype(np.float64).reshape(shape)
        offset += size
    if offset != len(flat):
        raise ShapeMismatch(f"{blob_path} has {len(flat) - offset} trailing values")
    model.set_parameters(values)
    return model, manifest
