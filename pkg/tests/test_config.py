import json

import pytest

from srdti.cnn.model import DESK_CONFIG
from srdti.config import ConfigError, load_config


def _load(tmp_path, data, seed=None):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return load_config(path, seed)


def test_defaults_are_desk(tmp_path):
    cfg = _load(tmp_path, {})
    assert cfg.cnn.layers == DESK_CONFIG.layers and cfg.cnn.kernels == DESK_CONFIG.kernels
    assert cfg.cnn.iterations <= 3000
    assert cfg.train_blocks.block == (24, 24, 24)
    assert cfg.subjects()["eval"] == ["eval-s101"]


def test_override_and_seed(tmp_path):
    cfg = _load(tmp_path, {"cnn": {"preset": "desk", "iterations": 7}, "seed": 3}, seed=9)
    assert cfg.cnn.iterations == 7 and cfg.seed == 9 and cfg.cnn.seed == 9
    assert json.loads(cfg.to_json())["seed"] == 9


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"phantom": {"dims": "x"}},
    {"phantom": 3},
    {"version": 99},
    {"seed": -1},
    {"upsample": {"methods": ["trilinear"]}},
    {"upsample": {"methods": ["lanczos", "cubic"]}},
    {"phantom": {"train_seeds": [1], "eval_seeds": [1]}},
    {"phantom": {"train_seeds": []}},
    {"scheme": {"source": "file"}},
    {"acquisition": {"directions": 3}},
    {"cnn": {"preset": "huge"}},
    {"cnn": {"preset": "desk", "dropout": 0.5}},
    {"phantom": {"dims": [16, 16, 16]}},
])
def test_rejects_bad_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        _load(tmp_path, data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
