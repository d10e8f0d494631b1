import json

import pytest

from curbseg.config import PipelineConfig
from curbseg.errors import ConfigurationError


def test_defaults_construct():
    cfg = PipelineConfig()
    assert cfg.grid.mode == "cylindrical"
    assert cfg.loss.delta_log == 1.02
    assert cfg.dbscan.eps == 1.0 and cfg.dbscan.min_pts == 5
    assert cfg.tolerance.taus == (0.05, 0.10, 0.15, 0.20)
    assert cfg.train.epochs == 100 and cfg.train.lr == 0.001 and cfg.train.batch_size == 6
    assert cfg.crop.forward_range == pytest.approx(40.43)


def test_partial_override():
    cfg = PipelineConfig.from_dict({"dbscan": {"eps": 2.0}, "seed": 7})
    assert cfg.dbscan.eps == 2.0
    assert cfg.dbscan.min_pts == 5
    assert cfg.seed == 7


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"dbscn": {"eps": 2.0}})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"loss": {"gamma": 3.0}})
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"grid": {"shape": [2, 2, 2]}})


def test_tolerance_list_shorthand():
    cfg = PipelineConfig.from_dict({"tolerance": [0.1, 0.2]})
    assert cfg.tolerance.taus == (0.1, 0.2)


def test_invalid_values_rejected():
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"post": {"delta_dist": -1.0}})
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"net": {"widths": [0, 1, 1, 1, 1]}})
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"train": {"epochs": 0}})


def test_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 3, "train": {"epochs": 2}}))
    cfg = PipelineConfig.from_file(path)
    assert cfg.seed == 3 and cfg.train.epochs == 2

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_file(bad)

    notdict = tmp_path / "arr.json"
    notdict.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_file(notdict)
