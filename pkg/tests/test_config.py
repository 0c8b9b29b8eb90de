import json

import pytest

from flowcast.config import RunConfig, config_to_dict, load_config
from flowcast.errors import ConfigError


def test_defaults_without_file():
    config = load_config(None)
    assert config.horizons == (96, 192, 336, 720)
    assert config.backcast == 96
    assert config.pretrain.lr == 1e-3
    assert config.pretrain.mask_p == 0.5
    assert config.model.context_dim == 64


def test_load_nested_fields(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({
        "seed": 9,
        "horizons": [96, 192],
        "encoder": {"latent_dim": 16},
        "scales": [{"name": "daily", "length": 24}],
        "synth": {"sinusoids": [{"period": 24.0, "amplitude": 2.0}]},
    }))
    config = load_config(p)
    assert config.seed == 9
    assert config.horizons == (96, 192)
    assert config.encoder.latent_dim == 16
    assert config.encoder.model_dim == 64  # untouched default
    assert config.scales[0].length == 24
    assert config.synth.sinusoids[0].amplitude == 2.0


def test_unknown_field_names_path(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"encoder": {"latent_dims": 16}}))
    with pytest.raises(ConfigError, match="encoder.latent_dims"):
        load_config(p)


def test_wrong_type_names_field(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"train": {"lr": "fast"}}))
    with pytest.raises(ConfigError, match="train.lr"):
        load_config(p)
    p.write_text(json.dumps({"seed": 1.5}))
    with pytest.raises(ConfigError, match="seed"):
        load_config(p)


def test_invalid_json_reported(tmp_path):
    p = tmp_path / "config.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_missing_file_reported():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/definitely/not/here.json")


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"seed": 3, "out": "from_file"}))
    config = load_config(p, {"seed": 11, "out": None})
    assert config.seed == 11
    assert config.out == "from_file"  # None override is ignored


def test_round_trips_through_dict(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"seed": 5, "horizons": [8]}))
    config = load_config(p)
    snapshot = config_to_dict(config)
    p2 = tmp_path / "again.json"
    p2.write_text(json.dumps(snapshot))
    assert load_config(p2) == config


def test_dataclass_validation_surfaces_as_config_error(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"scales": [{"name": "daily", "length": 2}]}))
    with pytest.raises(ConfigError, match="length"):
        load_config(p)
