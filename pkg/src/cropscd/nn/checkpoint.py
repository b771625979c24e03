"""Checkpoint directory format: manifest.json + one little-endian f32 blob
per tensor (parameters and running-stat buffers alike)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .modules import Module


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Module, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    index = 0
    for name, param in model.named_parameters():
        fname = f"{index:04d}.bin"
        Path(directory, fname).write_bytes(param.data.astype("<f4").tobytes(order="C"))
        entries.append({"name": name, "shape": list(param.data.shape), "file": fname, "kind": "param"})
        index += 1
    for name, buf in model.named_buffers():
        fname = f"{index:04d}.bin"
        Path(directory, fname).write_bytes(buf.astype("<f4").tobytes(order="C"))
        entries.append({"name": name, "shape": list(buf.shape), "file": fname, "kind": "buffer"})
        index += 1
    manifest = {"format": "cropscd-checkpoint-v1", "tensors": entries}
    Path(directory, "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def load_checkpoint(model: Module, directory: str | Path) -> Module:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for entry in manifest["tensors"]:
        raw = np.frombuffer(Path(directory, entry["file"]).read_bytes(), dtype="<f4")
        shape = tuple(entry["shape"])
        if raw.size != int(np.prod(shape)) if shape else raw.size != 1:
            raise CheckpointError(f"{entry['file']}: size mismatch for {entry['name']}")
        data = raw.reshape(shape)
        name = entry["name"]
        if entry["kind"] == "param":
            if name not in params:
                raise CheckpointError(f"model has no parameter {name}")
            params[name].data = data.astype(params[name].data.dtype)
        else:
            if name not in buffers:
                raise CheckpointError(f"model has no buffer {name}")
            buffers[name][...] = data.astype(buffers[name].dtype)
    return model
