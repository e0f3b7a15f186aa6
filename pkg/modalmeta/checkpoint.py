#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
检查点读写
JSON 格式，数组以完整精度的十进制保存，可逐位还原。
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

ArrayGroup = Dict[str, np.ndarray]


class CheckpointError(ValueError):
    """检查点损坏、版本不符或结构错误"""


@dataclass
class MomentSnapshot:
    """一组参数的 Adam 状态"""

    step: int
    m: ArrayGroup
    v: ArrayGroup


@dataclass
class Checkpoint:
    """
    检查点内容

    Attributes:
        trainer: 训练器类型 (maml / multi_maml / mumomaml)
        modulation: 调制方式
        config: 配置快照（ExperimentConfig.snapshot()）
        params: 参数组名 -> 参数名 -> 数组，例如 learner.0、omega
        optimizer: 参数组名 -> Adam 状态
        iteration: 已完成的元训练迭代数
    """

    trainer: str
    modulation: str
    config: Dict[str, Any]
    params: Dict[str, ArrayGroup]
    optimizer: Dict[str, MomentSnapshot] = field(default_factory=dict)
    iteration: int = 0
    version: int = FORMAT_VERSION


def _encode_array(array: np.ndarray) -> Dict[str, Any]:
    array = np.asarray(array, dtype=np.float64)
    return {"shape": list(array.shape), "values": array.ravel().tolist()}


def _encode_group(group: ArrayGroup) -> Dict[str, Any]:
    return {name: _encode_array(array) for name, array in group.items()}


def _decode_array(data: Dict[str, Any], where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in data["shape"])
        values = np.array(data["values"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"数组 {where} 结构错误: {e}")
    if values.ndim != 1 or values.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"数组 {where} 的数值个数与形状 {shape} 不符")
    return values.reshape(shape)


def _decode_group(data: Dict[str, Any], where: str) -> ArrayGroup:
    if not isinstance(data, dict):
        raise CheckpointError(f"{where} 必须是对象")
    return {name: _decode_array(item, f"{where}.{name}") for name, item in data.items()}


def checkpoint_to_dict(checkpoint: Checkpoint) -> Dict[str, Any]:
    return {
        "format_version": checkpoint.version,
        "trainer": checkpoint.trainer,
        "modulation": checkpoint.modulation,
        "iteration": checkpoint.iteration,
        "config": checkpoint.config,
        "params": {group: _encode_group(arrays) for group, arrays in checkpoint.params.items()},
        "optimizer": {
            group: {"step": state.step, "m": _encode_group(state.m), "v": _encode_group(state.v)}
            for group, state in checkpoint.optimizer.items()
        },
    }


def checkpoint_from_dict(data: Dict[str, Any]) -> Checkpoint:
    if not isinstance(data, dict):
        raise CheckpointError("检查点顶层必须是对象")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"检查点版本不符: 文件为 {version}，当前支持 {FORMAT_VERSION}")
    try:
        optimizer = {
            group: MomentSnapshot(
                step=int(state["step"]),
                m=_decode_group(state["m"], f"optimizer.{group}.m"),
                v=_decode_group(state["v"], f"optimizer.{group}.v"),
            )
            for group, state in data.get("optimizer", {}).items()
        }
        return Checkpoint(
            trainer=str(data["trainer"]),
            modulation=str(data["modulation"]),
            config=dict(data["config"]),
            params={group: _decode_group(arrays, f"params.{group}") for group, arrays in data["params"].items()},
            optimizer=optimizer,
            iteration=int(data["iteration"]),
            version=version,
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise CheckpointError(f"检查点缺少字段或结构错误: {e}")


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """
    保存检查点

    Args:
        path: 输出文件路径
        checkpoint: 检查点内容

    Returns:
        输出文件路径
    """
    path = Path(path)
    try:
        text = json.dumps(checkpoint_to_dict(checkpoint), ensure_ascii=False, allow_nan=False)
    except ValueError as e:
        raise CheckpointError(f"检查点包含非有限数值，无法保存: {e}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text + "\n")
    except OSError as e:
        raise CheckpointError(f"无法写入检查点 {path}: {e}")
    logger.info("检查点已保存: %s (迭代 %d)", path, checkpoint.iteration)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    读取检查点；解析失败时不返回任何部分状态

    Args:
        path: 检查点文件路径

    Returns:
        Checkpoint
    """
    path = Path(path)
    if not os.path.exists(path):
        raise CheckpointError(f"检查点文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"检查点文件损坏或被截断: {path}: {e}")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"检查点文件编码错误: {path}: {e}")
    return checkpoint_from_dict(data)


def describe_checkpoint(checkpoint: Checkpoint) -> Dict[str, Any]:
    """检查点概要，用于命令行输出"""
    return {
        "format_version": checkpoint.version,
        "trainer": checkpoint.trainer,
        "modulation": checkpoint.modulation,
        "iteration": checkpoint.iteration,
        "groups": {
            group: int(sum(array.size for array in arrays.values()))
            for group, arrays in checkpoint.params.items()
        },
    }
