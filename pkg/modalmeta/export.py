#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CSV 导出工具
训练日志、任务嵌入、PCA 坐标、拟合曲线统一用 pandas 写成 CSV
（逗号分隔、带表头、LF 换行、UTF-8、17 位有效数字）。
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from .config import FAMILY_PARAMS, DistConfig, Family, InnerConfig
from .embedding import PcaResult
from .evaluation import ModelPredictor
from .meta import MetaModel, TrainLog
from .networks import encode_task
from .taskgen import StreamPurpose, Task, TaskData, sample_task_batch, true_value

logger = logging.getLogger(__name__)

CURVE_POINTS = 201
TASK_PARAM_COLUMNS = ("A", "w", "b", "c")


class ExportError(OSError):
    """输出文件无法写入"""


class CsvExporter:
    """CSV 导出器"""

    def __init__(self, float_format: str = "%.17g"):
        """
        Args:
            float_format: 浮点数格式，默认 17 位有效数字，可精确还原
        """
        self.float_format = float_format

    def write(self, frame: pd.DataFrame, path: Union[str, Path]) -> Path:
        """
        写出 DataFrame

        Args:
            frame: 数据
            path: 输出文件路径

        Returns:
            输出文件路径
        """
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(
                path,
                index=False,
                float_format=self.float_format,
                lineterminator="\n",
                encoding="utf-8",
            )
        except OSError as e:
            raise ExportError(f"无法写入 {path}: {e}")
        logger.info("已导出 %d 行到 %s", len(frame), path)
        return path

    def export_train_log(self, log: TrainLog, path: Union[str, Path]) -> Path:
        return self.write(log.to_frame(), path)

    def export_pca(self, result: PcaResult, mode_labels: np.ndarray, path: Union[str, Path]) -> Path:
        frame = pd.DataFrame(
            {
                "mode_index": np.asarray(mode_labels, dtype=np.int64),
                "pc1": result.coords[:, 0],
                "pc2": result.coords[:, 1],
            }
        )
        return self.write(frame, path)


def embedding_frame(model: MetaModel, dist: DistConfig, n_tasks: int, seed: int) -> pd.DataFrame:
    """
    为 n_tasks 个任务计算嵌入 υ

    列：mode_index, family, A, w, b, c（不适用的参数为空）, u0 .. u{2H-1}
    """
    if model.omega is None:
        raise ValueError(f"export_embeddings: {model.trainer.value} 模型没有任务编码器")
    rows = []
    for task, data in sample_task_batch(dist, seed, StreamPurpose.EMBED, 0, n_tasks):
        upsilon = encode_task(model.omega, data.support_x, data.support_y).value
        row = {"mode_index": task.mode_index, "family": task.family.value}
        for name in TASK_PARAM_COLUMNS:
            row[name] = task.params.get(name, np.nan)
        for i, value in enumerate(upsilon):
            row[f"u{i}"] = float(value)
        rows.append(row)
    return pd.DataFrame(rows)


def export_embeddings(
    model: MetaModel,
    dist: DistConfig,
    n_tasks: int,
    seed: int,
    path: Union[str, Path],
    exporter: Optional[CsvExporter] = None,
) -> pd.DataFrame:
    """导出任务嵌入，每个任务一行"""
    frame = embedding_frame(model, dist, n_tasks, seed)
    (exporter or CsvExporter()).write(frame, path)
    return frame


def embedding_matrix(frame: pd.DataFrame) -> np.ndarray:
    columns = [c for c in frame.columns if c.startswith("u") and c[1:].isdigit()]
    return frame[columns].to_numpy(dtype=np.float64)


def emit_curves(
    model: MetaModel,
    task: Task,
    data: TaskData,
    dist: DistConfig,
    inner: InnerConfig,
    path: Union[str, Path],
    include_prior: bool = False,
    exporter: Optional[CsvExporter] = None,
) -> pd.DataFrame:
    """
    在 [x_low, x_high] 的 201 个等距点上导出真实函数与各步预测

    列：x, true_y, step_0 .. step_{eval_steps}；include_prior 时追加未调制先验列 prior。
    """
    grid = np.linspace(dist.x_low, dist.x_high, CURVE_POINTS).reshape(-1, 1)
    predictor = ModelPredictor(model, inner.alpha)
    predictions = predictor.sweep(task, data, grid, inner.eval_steps)
    columns = {"x": grid[:, 0], "true_y": true_value(task, grid)[:, 0]}
    for step, prediction in enumerate(predictions):
        columns[f"step_{step}"] = prediction[:, 0]
    if include_prior:
        columns["prior"] = predictor.prior(task, grid)[:, 0]
    frame = pd.DataFrame(columns)
    (exporter or CsvExporter()).write(frame, path)
    return frame


def support_frame(data: TaskData) -> pd.DataFrame:
    return pd.DataFrame({"x": data.support_x[:, 0], "y": data.support_y[:, 0]})


def task_description(task: Task) -> str:
    names: List[str] = list(FAMILY_PARAMS[Family(task.family)])
    params = ", ".join(f"{name}={task.params[name]:.4f}" for name in names)
    return f"{task.family.value}({params})"
