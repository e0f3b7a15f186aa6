#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验配置
JSON 配置文件的结构定义与校验（pydantic），以及环境变量读取。
"""

import json
import logging
import math
import os
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)

THREADS_ENV = "MODALMETA_THREADS"


class ConfigError(ValueError):
    """配置文件缺失或不合法"""


class Family(str, Enum):
    SINUSOID = "sinusoid"
    LINEAR = "linear"
    QUADRATIC = "quadratic"


class ModulationKind(str, Enum):
    NONE = "none"
    FILM = "film"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


class TrainerKind(str, Enum):
    MAML = "maml"
    MULTI_MAML = "multi_maml"
    MUMOMAML = "mumomaml"


class GradientOrder(str, Enum):
    SECOND = "second"
    FIRST = "first"


# 各函数族的参数及默认取值范围；二次函数的 A 为幅值范围，符号单独抽取
FAMILY_PARAMS: Dict[Family, Tuple[str, ...]] = {
    Family.SINUSOID: ("A", "w", "b"),
    Family.LINEAR: ("A", "b"),
    Family.QUADRATIC: ("A", "c", "b"),
}

DEFAULT_RANGES: Dict[Family, Dict[str, Tuple[float, float]]] = {
    Family.SINUSOID: {"A": (0.1, 5.0), "w": (0.5, 2.0), "b": (0.0, 2.0 * math.pi)},
    Family.LINEAR: {"A": (-3.0, 3.0), "b": (-3.0, 3.0)},
    Family.QUADRATIC: {"A": (0.02, 0.15), "c": (-3.0, 3.0), "b": (-3.0, 3.0)},
}


class ModeSpec(BaseModel):
    """一个任务模态（函数族）及其参数范围"""

    family: Family
    ranges: Dict[str, Tuple[float, float]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _fill_ranges(self) -> "ModeSpec":
        allowed = FAMILY_PARAMS[self.family]
        unknown = set(self.ranges) - set(allowed)
        if unknown:
            raise ValueError(f"{self.family.value} 不支持的参数: {sorted(unknown)}")
        merged = {name: self.ranges.get(name, DEFAULT_RANGES[self.family][name]) for name in allowed}
        for name, (low, high) in merged.items():
            if not low <= high:
                raise ValueError(f"{self.family.value}.{name} 范围下界大于上界: [{low}, {high}]")
        if self.family is Family.QUADRATIC and merged["A"][0] <= 0:
            raise ValueError("quadratic.A 是幅值范围，下界必须为正")
        self.ranges = merged
        return self


def two_mode_preset() -> List[ModeSpec]:
    return [ModeSpec(family=Family.SINUSOID), ModeSpec(family=Family.LINEAR)]


def three_mode_preset() -> List[ModeSpec]:
    return two_mode_preset() + [ModeSpec(family=Family.QUADRATIC)]


class DistConfig(BaseModel):
    """多模态任务分布"""

    model_config = ConfigDict(populate_by_name=True)

    modes: List[ModeSpec] = Field(default_factory=two_mode_preset)
    noise_sigma: float = Field(0.3, ge=0.0)
    k_shot: int = Field(5, ge=1, alias="K")
    l_query: int = Field(10, ge=1, alias="L")
    x_low: float = -5.0
    x_high: float = 5.0
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_range(self) -> "DistConfig":
        if not self.x_low < self.x_high:
            raise ValueError(f"x_low 必须小于 x_high: {self.x_low} >= {self.x_high}")
        return self


class NetworkConfig(BaseModel):
    """基学习器与任务编码器的结构"""

    widths: List[int] = Field(default_factory=lambda: [1, 100, 100, 100, 100, 1])
    hidden_size: int = Field(40, ge=1, alias="H")
    modulator_hidden: int = Field(100, ge=1)

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("widths")
    @classmethod
    def _check_widths(cls, widths: List[int]) -> List[int]:
        if len(widths) < 2:
            raise ValueError("widths 至少需要两项")
        if any(w < 1 for w in widths):
            raise ValueError(f"widths 不能包含 0: {widths}")
        if widths[0] != 1 or widths[-1] != 1:
            raise ValueError(f"回归网络的输入输出宽度必须为 1: {widths}")
        return widths


class InnerConfig(BaseModel):
    """内循环（梯度适应）"""

    alpha: float = Field(0.01, ge=0.0)
    train_steps: int = Field(1, ge=0)
    eval_steps: int = Field(5, ge=0)


class MetaConfig(BaseModel):
    """外循环（元优化）"""

    meta_lr: float = Field(0.001, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(1e-8, gt=0.0)
    meta_batch: int = Field(25, ge=1)
    iterations: int = Field(5000, ge=0)
    order: GradientOrder = GradientOrder.SECOND
    trainer: TrainerKind = TrainerKind.MUMOMAML
    modulation: ModulationKind = ModulationKind.FILM
    eval_every: int = Field(500, ge=0)
    eval_tasks: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check_trainer(self) -> "MetaConfig":
        if self.trainer is not TrainerKind.MUMOMAML and self.modulation is not ModulationKind.NONE:
            raise ValueError(f"{self.trainer.value} 不使用调制，modulation 必须为 none")
        return self

    @property
    def betas(self) -> Tuple[float, float]:
        return (self.beta1, self.beta2)


class ExperimentConfig(BaseModel):
    """完整的实验配置（对应 JSON 配置文件）"""

    distribution: DistConfig = Field(default_factory=DistConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    inner: InnerConfig = Field(default_factory=InnerConfig)
    meta: MetaConfig = Field(default_factory=MetaConfig)

    @property
    def seed(self) -> int:
        return self.distribution.seed

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed 超出 64 位无符号整数范围: {seed}")
        distribution = self.distribution.model_copy(update={"seed": seed})
        return self.model_copy(update={"distribution": distribution})

    def snapshot(self) -> Dict:
        """可 JSON 序列化的配置快照"""
        return self.model_dump(mode="json", by_alias=True)


def parse_config(data: Dict, source: str = "<dict>") -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"配置不合法 ({source}): {e}")
    if not config.distribution.modes:
        raise ConfigError(f"配置不合法 ({source}): distribution.modes 不能为空")
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    读取 JSON 配置文件

    Args:
        path: 配置文件路径

    Returns:
        ExperimentConfig
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件 JSON 格式错误: {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是对象: {path}")
    logger.info("已读取配置文件: %s", path)
    return parse_config(data, str(path))


def resolve_threads(default: int = 1) -> int:
    """读取 MODALMETA_THREADS（先加载 .env）"""
    load_dotenv()
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} 必须是正整数，实际为 {raw!r}")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} 必须是正整数，实际为 {raw!r}")
    return threads
