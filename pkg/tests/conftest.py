# -*- coding: utf-8 -*-
"""测试共用的小规模配置"""

import json
from typing import Any, Callable, Dict

import pytest

from modalmeta.config import ExperimentConfig, parse_config

TINY_NETWORK = {"widths": [1, 8, 8, 1], "H": 4, "modulator_hidden": 8}


def tiny_dict(trainer: str = "mumomaml", modulation: str = "film", **meta: Any) -> Dict[str, Any]:
    meta_section = {"meta_batch": 3, "iterations": 3, "eval_every": 0, "eval_tasks": 10}
    meta_section.update(meta)
    meta_section.update({"trainer": trainer, "modulation": modulation})
    return {
        "distribution": {"seed": 7},
        "network": dict(TINY_NETWORK),
        "inner": {"alpha": 0.01, "train_steps": 1, "eval_steps": 5},
        "meta": meta_section,
    }


@pytest.fixture
def tiny_config() -> Callable[..., ExperimentConfig]:
    """tiny_config(trainer, modulation, **meta) -> ExperimentConfig"""

    def factory(trainer: str = "mumomaml", modulation: str = "film", **meta: Any) -> ExperimentConfig:
        return parse_config(tiny_dict(trainer, modulation, **meta))

    return factory


@pytest.fixture
def config_file(tmp_path) -> Callable[..., str]:
    """把配置字典写到临时 JSON 文件，返回路径"""

    def write(data: Dict[str, Any], name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    return write


@pytest.fixture
def tiny_data() -> Callable[..., Dict[str, Any]]:
    """tiny_data(trainer, modulation, **meta) -> 配置字典"""
    return tiny_dict
