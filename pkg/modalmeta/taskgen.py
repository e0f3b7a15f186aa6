#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
任务生成
从多模态回归任务分布中抽取任务，并生成带噪声的支持集/查询集。
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import List, Mapping, Tuple, Union

import numpy as np

from .config import FAMILY_PARAMS, DistConfig, Family

Number = Union[float, np.ndarray]


class TaskSamplingError(ValueError):
    """任务分布无法抽样"""


class StreamPurpose(IntEnum):
    """随机流用途，用作 SeedSequence 的派生键"""

    TRAIN = 0
    EVAL = 1
    INIT_LEARNER = 2
    INIT_ENCODER = 3
    EMBED = 4
    CURVES = 5
    GRADCHECK = 6


def task_stream(seed: int, purpose: StreamPurpose, counter: int) -> np.random.Generator:
    """
    以 (seed, 用途, 计数器) 为键的 Philox 随机流

    每个任务使用独立的流，因此并行抽样与顺序无关。
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(counter)))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class Task:
    """一个目标函数：模态编号 + 该函数族的参数"""

    mode_index: int
    family: Family
    params: Mapping[str, float]


@dataclass(frozen=True)
class TaskData:
    """支持集 (K 个点) 与查询集 (L 个点)，形状均为 [n, 1]"""

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    query_true: np.ndarray

    @property
    def k_shot(self) -> int:
        return int(self.support_x.shape[0])

    @property
    def l_query(self) -> int:
        return int(self.query_x.shape[0])


def _draw_params(config: DistConfig, mode_index: int, rng: np.random.Generator) -> Task:
    mode_spec = config.modes[mode_index]
    params = {}
    for name in FAMILY_PARAMS[mode_spec.family]:
        low, high = mode_spec.ranges[name]
        if mode_spec.family is Family.QUADRATIC and name == "A":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            params[name] = sign * float(rng.uniform(low, high))
        else:
            params[name] = float(rng.uniform(low, high))
    return Task(mode_index=mode_index, family=mode_spec.family, params=params)


def sample_task(config: DistConfig, rng: np.random.Generator) -> Task:
    """
    抽取一个任务

    模态均匀抽取；参数在范围内均匀抽取。二次函数的 A 先以 1/2 概率定符号，
    再在幅值范围内均匀抽取。
    """
    if not config.modes:
        raise TaskSamplingError("sample_task: 模态列表为空")
    mode_index = int(rng.integers(len(config.modes)))
    return _draw_params(config, mode_index, rng)


def sample_task_in_mode(config: DistConfig, mode_index: int, rng: np.random.Generator) -> Task:
    """在指定模态内抽取任务（用于导出某一模态的拟合曲线）"""
    if not 0 <= mode_index < len(config.modes):
        raise TaskSamplingError(f"sample_task_in_mode: 模态 {mode_index} 超出范围 [0, {len(config.modes)})")
    return _draw_params(config, mode_index, rng)


def true_value(task: Task, x: Number) -> Number:
    """无噪声目标函数值"""
    p = task.params
    if task.family is Family.SINUSOID:
        return p["A"] * np.sin(p["w"] * x + p["b"])
    if task.family is Family.LINEAR:
        return p["A"] * x + p["b"]
    return p["A"] * (x - p["c"]) ** 2 + p["b"]


def _draw_points(task: Task, config: DistConfig, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, ...]:
    x = rng.uniform(config.x_low, config.x_high, size=(n, 1))
    clean = true_value(task, x)
    noise = rng.standard_normal(size=(n, 1))
    return x, clean + config.noise_sigma * noise, clean


def sample_dataset(task: Task, config: DistConfig, rng: np.random.Generator) -> TaskData:
    """按采样顺序生成支持集与查询集（不排序）"""
    support_x, support_y, _ = _draw_points(task, config, rng, config.k_shot)
    query_x, query_y, query_true = _draw_points(task, config, rng, config.l_query)
    return TaskData(support_x, support_y, query_x, query_y, query_true)


def sample_task_batch(
    config: DistConfig, seed: int, purpose: StreamPurpose, start: int, count: int
) -> List[Tuple[Task, TaskData]]:
    """用计数器 start .. start+count-1 各自的随机流抽取一批任务"""
    batch = []
    for counter in range(start, start + count):
        rng = task_stream(seed, purpose, counter)
        task = sample_task(config, rng)
        batch.append((task, sample_dataset(task, config, rng)))
    return batch
