#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
模型评估
在留出任务上统计调制后（第 0 步）与每一步梯度适应后的查询集 MSE。
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .config import DistConfig, ModulationKind
from .diffcore import ParamSet
from .meta import MetaModel, adaptation_trajectory, task_modulation
from .networks import forward
from .taskgen import StreamPurpose, Task, TaskData, sample_task_batch

logger = logging.getLogger(__name__)

# 对照表中 "Post Adaptation" 对应的步数
POST_ADAPTATION_STEP = 5


class ModulationMismatchError(ValueError):
    """评估时指定的调制方式与检查点不一致"""


class Predictor(Protocol):
    def sweep(self, task: Task, data: TaskData, x: np.ndarray, steps: int) -> List[np.ndarray]:
        """返回第 0..steps 步在 x 上的预测"""
        ...


class ModelPredictor:
    """用元学习模型做预测：路由 / 编码调制，然后逐步梯度适应"""

    def __init__(self, model: MetaModel, alpha: float):
        self.model = model
        self.alpha = alpha

    def modulation(self, task: Task, data: TaskData) -> ParamSet:
        return task_modulation(self.model.omega, self.model.kind, data).detached()

    def trajectory(self, task: Task, data: TaskData, steps: int) -> Tuple[ParamSet, List[ParamSet]]:
        theta = self.model.route(task.mode_index)
        tau = self.modulation(task, data)
        path = adaptation_trajectory(
            theta, tau, self.model.kind, data.support_x, data.support_y, self.alpha, steps
        )
        return tau, path

    def sweep(self, task: Task, data: TaskData, x: np.ndarray, steps: int) -> List[np.ndarray]:
        tau, path = self.trajectory(task, data, steps)
        return [np.array(forward(theta, tau, self.model.kind, x).value) for theta in path]

    def prior(self, task: Task, x: np.ndarray) -> np.ndarray:
        """未调制、未适应的元先验"""
        theta = self.model.route(task.mode_index)
        return np.array(forward(theta, ParamSet(), ModulationKind.NONE, x).value)


class ModeBreakdown(BaseModel):
    mode_index: int
    family: str
    n_tasks: int
    mse_by_step: List[float]
    mse_clean_by_step: List[float]


class EvalReport(BaseModel):
    """
    评估报告

    mse_by_step[k] 为 k 次内循环更新后的平均查询集 MSE（噪声目标），
    第 0 项即调制后 / 先验的表现；mse_clean_by_step 为对无噪声目标的 MSE。
    """

    trainer: str
    modulation: str
    n_tasks: int
    eval_steps: int
    mse_by_step: List[float]
    mse_clean_by_step: List[float]
    per_mode: List[ModeBreakdown] = Field(default_factory=list)

    @property
    def post_modulation(self) -> float:
        return self.mse_by_step[0]

    @property
    def post_adaptation(self) -> float:
        return self.mse_by_step[min(POST_ADAPTATION_STEP, self.eval_steps)]

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), ensure_ascii=False, indent=2)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))


def _task_errors(predictor: Predictor, task: Task, data: TaskData, steps: int) -> Tuple[np.ndarray, np.ndarray]:
    predictions = predictor.sweep(task, data, data.query_x, steps)
    if len(predictions) != steps + 1:
        raise ValueError(f"预测器返回 {len(predictions)} 组预测，应为 {steps + 1}")
    noisy = np.array([np.mean((p - data.query_y) ** 2) for p in predictions])
    clean = np.array([np.mean((p - data.query_true) ** 2) for p in predictions])
    return noisy, clean


def _mean_rows(rows: Sequence[np.ndarray]) -> List[float]:
    total = np.zeros_like(rows[0])
    for row in rows:
        total = total + row
    return [float(v) for v in total / len(rows)]


def evaluate_predictor(
    predictor: Predictor,
    dist: DistConfig,
    n_tasks: int,
    eval_steps: int,
    seed: int,
    trainer: str = "custom",
    modulation: str = ModulationKind.NONE.value,
    threads: int = 1,
) -> EvalReport:
    """
    在 n_tasks 个留出任务上评估任意预测器

    任务使用 EVAL 用途的随机流，计数器 0..n_tasks-1，与训练任务互不重叠。
    """
    if n_tasks < 1:
        raise ValueError(f"evaluate: n_tasks 必须至少为 1，实际 {n_tasks}")
    batch = sample_task_batch(dist, seed, StreamPurpose.EVAL, 0, n_tasks)

    def work(item: Tuple[Task, TaskData]) -> Tuple[np.ndarray, np.ndarray]:
        return _task_errors(predictor, item[0], item[1], eval_steps)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errors = list(pool.map(work, batch))
    else:
        errors = [work(item) for item in batch]

    per_mode = []
    for mode_index, mode_spec in enumerate(dist.modes):
        picked = [errors[j] for j, (task, _) in enumerate(batch) if task.mode_index == mode_index]
        if not picked:
            continue
        per_mode.append(
            ModeBreakdown(
                mode_index=mode_index,
                family=mode_spec.family.value,
                n_tasks=len(picked),
                mse_by_step=_mean_rows([e[0] for e in picked]),
                mse_clean_by_step=_mean_rows([e[1] for e in picked]),
            )
        )
    return EvalReport(
        trainer=trainer,
        modulation=modulation,
        n_tasks=n_tasks,
        eval_steps=eval_steps,
        mse_by_step=_mean_rows([e[0] for e in errors]),
        mse_clean_by_step=_mean_rows([e[1] for e in errors]),
        per_mode=per_mode,
    )


def evaluate_model(
    model: MetaModel,
    dist: DistConfig,
    n_tasks: int,
    eval_steps: int,
    alpha: float,
    seed: int,
    kind: Optional[ModulationKind] = None,
    threads: int = 1,
) -> EvalReport:
    """
    评估元学习模型

    Args:
        model: 训练好的模型
        dist: 任务分布
        n_tasks: 留出任务数
        eval_steps: 内循环步数
        alpha: 内循环步长
        seed: 随机种子
        kind: 期望的调制方式，与模型不一致时报错

    Returns:
        EvalReport
    """
    if kind is not None and ModulationKind(kind) is not model.kind:
        raise ModulationMismatchError(
            f"调制方式不一致: 期望 {ModulationKind(kind).value}，检查点为 {model.kind.value}"
        )
    report = evaluate_predictor(
        ModelPredictor(model, alpha),
        dist,
        n_tasks,
        eval_steps,
        seed,
        trainer=model.trainer.value,
        modulation=model.kind.value,
        threads=threads,
    )
    logger.info(
        "评估完成: %s/%s 第0步 %.4f，第%d步 %.4f",
        report.trainer,
        report.modulation,
        report.mse_by_step[0],
        eval_steps,
        report.mse_by_step[-1],
    )
    return report


def comparison_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """对照表：调制后 / 适应后 MSE（噪声目标与无噪声目标）"""
    rows = []
    for report in reports:
        step = min(POST_ADAPTATION_STEP, report.eval_steps)
        rows.append(
            {
                "Method": report.trainer,
                "Modulation": report.modulation,
                "Post Modulation": report.mse_by_step[0],
                "Post Adaptation": report.mse_by_step[step],
                "Post Modulation (clean)": report.mse_clean_by_step[0],
                "Post Adaptation (clean)": report.mse_clean_by_step[step],
            }
        )
    return pd.DataFrame(rows)
