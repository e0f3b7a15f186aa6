# -*- coding: utf-8 -*-
"""配置解析测试"""

import math
from pathlib import Path

import pytest

from modalmeta.config import (
    ConfigError,
    ExperimentConfig,
    Family,
    GradientOrder,
    ModulationKind,
    TrainerKind,
    load_config,
    parse_config,
    resolve_threads,
    three_mode_preset,
)


def test_empty_config_uses_defaults():
    config = parse_config({})
    dist = config.distribution
    assert [m.family for m in dist.modes] == [Family.SINUSOID, Family.LINEAR]
    assert dist.k_shot == 5 and dist.l_query == 10
    assert dist.noise_sigma == 0.3
    assert (dist.x_low, dist.x_high) == (-5.0, 5.0)
    assert config.network.widths == [1, 100, 100, 100, 100, 1]
    assert config.network.hidden_size == 40
    assert config.inner.alpha == 0.01
    assert config.meta.trainer is TrainerKind.MUMOMAML
    assert config.meta.modulation is ModulationKind.FILM
    assert config.meta.order is GradientOrder.SECOND


def test_default_ranges_filled():
    config = parse_config({"distribution": {"modes": [{"family": "sinusoid", "ranges": {"A": [1.0, 2.0]}}]}})
    ranges = config.distribution.modes[0].ranges
    assert ranges["A"] == (1.0, 2.0)
    assert ranges["w"] == (0.5, 2.0)
    assert ranges["b"] == pytest.approx((0.0, 2.0 * math.pi))


def test_aliases_accepted():
    config = parse_config({"distribution": {"K": 3, "L": 7}, "network": {"H": 16}})
    assert config.distribution.k_shot == 3
    assert config.distribution.l_query == 7
    assert config.network.hidden_size == 16


def test_snapshot_reparses_to_equal_config():
    config = parse_config({"distribution": {"K": 3, "seed": 11}, "meta": {"order": "first"}})
    assert parse_config(config.snapshot()) == config


def test_three_mode_preset():
    families = [m.family for m in three_mode_preset()]
    assert families == [Family.SINUSOID, Family.LINEAR, Family.QUADRATIC]


@pytest.mark.parametrize(
    "data",
    [
        {"meta": {"trainer": "maml", "modulation": "film"}},
        {"network": {"widths": [2, 8, 1]}},
        {"distribution": {"x_low": 1.0, "x_high": 1.0}},
        {"distribution": {"modes": []}},
        {"distribution": {"modes": [{"family": "linear", "ranges": {"w": [0, 1]}}]}},
        {"distribution": {"modes": [{"family": "quadratic", "ranges": {"A": [-0.1, 0.1]}}]}},
        {"distribution": {"noise_sigma": -0.1}},
        {"meta": {"trainer": "reptile"}},
    ],
)
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "nowhere.json"
    with pytest.raises(ConfigError, match="nowhere.json"):
        load_config(path)


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"meta\": ", encoding="utf-8")
    with pytest.raises(ConfigError, match="broken.json"):
        load_config(path)


def test_load_config_file(config_file):
    config = load_config(config_file({"meta": {"trainer": "multi_maml", "modulation": "none"}}))
    assert config.meta.trainer is TrainerKind.MULTI_MAML


def test_with_seed():
    config = ExperimentConfig()
    assert config.with_seed(42).seed == 42
    assert config.with_seed(None) is config
    with pytest.raises(ConfigError):
        config.with_seed(2**64)


class TestThreads:
    def test_default_when_unset(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("MODALMETA_THREADS", raising=False)
        assert resolve_threads() == 1

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("MODALMETA_THREADS", "4")
        assert resolve_threads() == 4

    @pytest.mark.parametrize("raw", ["zero", "0", "-2"])
    def test_invalid_values(self, monkeypatch, raw):
        monkeypatch.setenv("MODALMETA_THREADS", raw)
        with pytest.raises(ConfigError):
            resolve_threads()


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", ["two_mode.json", "three_mode.json", "maml.json"])
def test_shipped_configs_load(name):
    config = load_config(CONFIG_DIR / name)
    assert config.network.widths == [1, 40, 40, 40, 40, 1]
    assert config.meta.meta_batch == 10
    # 训练展开的内循环步数与评估一致
    assert config.inner.train_steps == config.inner.eval_steps == 5
