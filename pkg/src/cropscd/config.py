"""Pipeline configuration: JSON document with strict key checking.

Every stage reads its parameters from one nested document; unknown keys are
rejected rather than ignored so typos cannot silently fall back to
defaults. The seed is mandatory for commands that train or synthesize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": None,  # mandatory for synth/train/run
    "scene_dir": "scene",
    "out_dir": "out",
    "synth": {
        "size": 1024,
        "tile": 64,
        "parcel_pitch": 96,
        "jitter": 8,
        "palette": "distinct",
        "category_weights": [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        "min_parcel_px": 400,
        "road_buffer": 6.0,
        "min_tile_coverage": 0.5,
        "background_confusion": 0.5,
        "speckle_fraction": 0.06,
    },
    "scene": {
        "max_elev": 93.0,
        "max_slope": 16.0,
        "road_buffer": 6.0,
    },
    "edge": {
        "epochs": 20,
        "batch_size": 4,
        "lr": 0.001,
        "momentum": 0.9,
        "weight_decay": 0.0001,
        "infer_window": 256,
        "infer_margin": 16,
        "sem_rate_factor": 1,
        "sem_branches": 3,
        "sem_channels": 8,
    },
    "parcels": {
        "threshold": 0.5,
        "dilate_radius": 1,
        "min_area": 25,
        "simplify_tol": 1.0,
        "extend_len": 8,
        "dangle_len": 5,
        "fuse_min_area": 25,
    },
    "scd": {
        "epochs": 20,
        "batch_size": 4,
        "lr": 0.001,
        "momentum": 0.9,
        "weight_decay": 0.0001,
        "rcca_repeats": 2,
    },
    "ablation": {
        "scene": True,
        "parcels": True,
    },
}


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if key in overrides:
            value = overrides[key]
            if isinstance(default, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {path}{key} must be an object")
                out[key] = _merge(default, value, f"{path}{key}.")
            else:
                out[key] = value
        else:
            out[key] = dict(default) if isinstance(default, dict) else default
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


@dataclass
class PipelineConfig:
    data: dict = field(default_factory=lambda: _merge(DEFAULTS, {}))

    @staticmethod
    def load(path: str | Path | None, overrides: dict | None = None) -> "PipelineConfig":
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except FileNotFoundError as exc:
                raise ConfigError(f"config file not found: {path}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config root must be a JSON object")
        merged = _merge(DEFAULTS, doc)
        if overrides:
            merged = _merge(merged, overrides)
        return PipelineConfig(merged)

    def require_seed(self) -> int:
        seed = self.data.get("seed")
        if seed is None:
            raise ConfigError("a seed is mandatory for synth/train/run commands")
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        return seed

    def __getitem__(self, key: str):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=1, sort_keys=True)
