"""Run-configuration parsing and validation."""

import json

import pytest

from wavesep.config import load_run_config, resolved_dict
from wavesep.errors import ConfigError


def _write(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    return p


def test_defaults_fill_missing_sections(tmp_path):
    cfg = load_run_config(_write(tmp_path, {}))
    assert cfg.model.num_sources == 4
    assert cfg.train.batch_size == 4
    assert cfg.dataset.seed == 0


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config section"):
        load_run_config(_write(tmp_path, {"modle": {}}))


def test_unknown_key_names_the_path(tmp_path):
    with pytest.raises(ConfigError, match=r"model\.depht"):
        load_run_config(_write(tmp_path, {"model": {"depht": 3}}))


def test_bad_value_becomes_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"model": {"depth": -1}}))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"train": {"lr": 0.0}}))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"dataset": {"duration_range": [2.0, 1.0]}}))


def test_malformed_json_is_config_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "nope.json")


def test_lists_become_tuples(tmp_path):
    cfg = load_run_config(
        _write(tmp_path, {"dataset": {"ensemble_sizes": [2, 4], "duration_range": [1, 2]}})
    )
    assert cfg.dataset.ensemble_sizes == (2, 4)
    assert cfg.dataset.duration_range == (1.0, 2.0)


def test_overrides_win_over_file(tmp_path):
    p = _write(tmp_path, {"model": {"depth": 3}})
    cfg = load_run_config(p, {"model": {"depth": 5, "conditioning_enabled": True}})
    assert cfg.model.depth == 5
    assert cfg.model.conditioning_enabled


def test_resolved_dict_round_trips(tmp_path):
    p = _write(tmp_path, {"train": {"max_steps": 7}})
    cfg = load_run_config(p)
    doc = resolved_dict(cfg, command="test")
    doc.pop("command")
    q = tmp_path / "again.json"
    q.write_text(json.dumps(doc))
    cfg2 = load_run_config(q)
    assert cfg2 == cfg


def test_wrong_type_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"model": {"depth": "six"}}))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, {"dataset": "not a table"}))
