import json

import pytest

from cropscd.config import ConfigError, DEFAULTS, PipelineConfig


def test_defaults_without_file():
    config = PipelineConfig.load(None)
    assert config["edge"]["epochs"] == 20
    assert config["scd"]["batch_size"] == 4
    assert config["scd"]["lr"] == 0.001
    assert config["scene"]["max_elev"] == 93.0
    assert config["scene"]["max_slope"] == 16.0
    assert config["ablation"] == {"scene": True, "parcels": True}


def test_overrides_merge(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "edge": {"epochs": 3}}))
    config = PipelineConfig.load(path)
    assert config["seed"] == 5
    assert config["edge"]["epochs"] == 3
    assert config["edge"]["lr"] == DEFAULTS["edge"]["lr"]


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"edge": {"epocs": 3}}))
    with pytest.raises(ConfigError, match="edge.epocs"):
        PipelineConfig.load(path)


def test_unknown_top_level_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seeed": 1}))
    with pytest.raises(ConfigError):
        PipelineConfig.load(path)


def test_seed_required_for_training():
    config = PipelineConfig.load(None)
    with pytest.raises(ConfigError, match="seed"):
        config.require_seed()


def test_seed_validation():
    config = PipelineConfig.load(None, {"seed": -3})
    with pytest.raises(ConfigError):
        config.require_seed()


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        PipelineConfig.load(path)


def test_missing_file():
    with pytest.raises(ConfigError):
        PipelineConfig.load("/does/not/exist.json")


def test_cli_override_takes_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5}))
    config = PipelineConfig.load(path, {"seed": 9})
    assert config["seed"] == 9
