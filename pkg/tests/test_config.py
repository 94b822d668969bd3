import math

import pytest
import yaml

from gaitkd.config import RunConfig, config_hash, default_config, dump_config, load_config, parse_config
from gaitkd.errors import ConfigError


def test_round_trip_is_lossless():
    cfg = default_config()
    text = dump_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert dump_config(again) == text
    assert config_hash(again) == config_hash(cfg)


def test_infinite_gamma_serialises():
    cfg = default_config()
    assert math.isinf(cfg.objective.dkd.gamma)
    assert ".inf" in dump_config(cfg)
    assert math.isinf(parse_config(dump_config(cfg)).objective.dkd.gamma)


def test_partial_config_keeps_defaults():
    cfg = parse_config("objective:\n  soft:\n    T: 4\nseeds: [3]\n")
    assert cfg.objective.soft.T == 4.0
    assert cfg.objective.soft.alpha == 1.0
    assert cfg.seeds == (3,)
    assert cfg.student == RunConfig().student


def test_teacher_list():
    cfg = parse_config("teachers:\n  - {num_parts: 6, hidden: 8}\n  - {num_parts: 5}\n")
    assert [t.num_parts for t in cfg.teachers] == [6, 5]


@pytest.mark.parametrize("text", [
    "bogus: 1\n",
    "objective:\n  soft:\n    temperature: 2\n",
    "train:\n  steps: many\n",
    "objective:\n  decision_mode: magic\n",
    "objective:\n  boundary:\n    layer_weights: [0.2, 0.2]\n",
    "seeds: []\n",
    "teachers: []\n",
    "synth: [1, 2]\n",
    "train: {steps: true}\n",
    "{unclosed\n",
])
def test_invalid_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_from_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(dump_config(default_config()))
    assert load_config(path) == default_config()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_hash_changes_with_content():
    assert config_hash(parse_config("seeds: [1]\n")) != config_hash(parse_config("seeds: [2]\n"))


def test_shipped_config_matches_defaults():
    from pathlib import Path
    shipped = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"
    assert yaml.safe_load(shipped.read_text()) == yaml.safe_load(dump_config(default_config()))
