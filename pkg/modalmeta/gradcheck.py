#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
梯度检验套件
对微分核心、网络和二阶元目标分别做有限差分检验。
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .config import DistConfig, InnerConfig, ModulationKind, NetworkConfig
from .diffcore import (
    Expr,
    GradCheckReport,
    ParamSet,
    add,
    finite_difference_check,
    gradient,
    matmul,
    reduce_mean,
    reduce_sum,
    relu,
    scale,
    sigmoid,
    softmax,
    square,
    tanh,
)
from .meta import meta_objective, mse, task_modulation
from .networks import forward, init_encoder, init_learner
from .taskgen import StreamPurpose, TaskData, sample_task_batch, task_stream

logger = logging.getLogger(__name__)

TINY_WIDTHS = [1, 8, 8, 1]
TINY_HIDDEN = 4
TINY_MODULATOR_HIDDEN = 8
TINY_K = 3
TINY_L = 4

Analytic = Callable[[Expr, ParamSet], ParamSet]


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport


def corrupted_gradient(factor: float) -> Optional[Analytic]:
    """把解析梯度整体乘以 factor，用作反例对照；factor 为 1 时返回 None"""
    if factor == 1.0:
        return None

    def analytic(out: Expr, params: ParamSet) -> ParamSet:
        grads = gradient(out, params)
        return ParamSet((name, scale(g, factor)) for name, g in grads.items())

    return analytic


def _randomized(params: ParamSet, rng: np.random.Generator, spread: float) -> ParamSet:
    return ParamSet.from_arrays({name: rng.normal(0.0, spread, size=p.shape) for name, p in params.items()})


def composite_params(seed: int) -> ParamSet:
    """20 个参数的两层小网络"""
    rng = task_stream(seed, StreamPurpose.GRADCHECK, 0)
    return ParamSet.from_arrays(
        {
            "w1": rng.normal(0.0, 0.8, size=(2, 4)),
            "b1": rng.normal(0.0, 0.3, size=4),
            "w2": rng.normal(0.0, 0.8, size=(4, 2)),
        }
    )


def composite_loss(params: ParamSet) -> Expr:
    """tanh / relu / sigmoid / softmax 组合成的标量函数"""
    x = np.array([[0.5, -1.2], [1.5, 0.3], [-0.7, 0.9]])
    hidden = tanh(add(matmul(x, params["w1"]), params["b1"]))
    out = matmul(relu(add(hidden, 0.1)), params["w2"])
    probs = softmax(out, axis=1)
    return add(reduce_mean(square(sigmoid(out))), reduce_sum(square(probs)))


def gradient_norm(builder: Callable[[ParamSet], Expr]) -> Callable[[ParamSet], Expr]:
    """g(w) = ‖∇f(w)‖²，用于检验二阶求导"""

    def squared_norm(params: ParamSet) -> Expr:
        grads = gradient(builder(params), params)
        total: Optional[Expr] = None
        for g in grads.values():
            term = reduce_sum(square(g))
            total = term if total is None else add(total, term)
        return total

    return squared_norm


def tiny_network(kind: ModulationKind, seed: int) -> ParamSet:
    """widths [1,8,8,1]、H=4 的学习器与编码器，参数随机化（调制输出层非零）"""
    config = NetworkConfig(widths=TINY_WIDTHS, H=TINY_HIDDEN, modulator_hidden=TINY_MODULATOR_HIDDEN)
    theta = init_learner(TINY_WIDTHS, task_stream(seed, StreamPurpose.GRADCHECK, 1))
    omega = init_encoder(config, kind, task_stream(seed, StreamPurpose.GRADCHECK, 2))
    omega = _randomized(omega, task_stream(seed, StreamPurpose.GRADCHECK, 3), 0.3)
    return theta.merged(omega)


def tiny_tasks(seed: int, count: int) -> List[TaskData]:
    dist = DistConfig(K=TINY_K, L=TINY_L)
    return [data for _, data in sample_task_batch(dist, seed, StreamPurpose.GRADCHECK, 10, count)]


def _split(params: ParamSet):
    theta = params.subset(name for name in params if name.startswith("block"))
    omega = params.subset(name for name in params if not name.startswith("block"))
    return theta, omega


def network_loss(kind: ModulationKind, data: TaskData) -> Callable[[ParamSet], Expr]:
    def loss(params: ParamSet) -> Expr:
        theta, omega = _split(params)
        tau = task_modulation(omega, kind, data)
        return mse(forward(theta, tau, kind, data.query_x), data.query_y)

    return loss


def meta_loss(kind: ModulationKind, batch: List[TaskData], inner: InnerConfig) -> Callable[[ParamSet], Expr]:
    def loss(params: ParamSet) -> Expr:
        theta, omega = _split(params)
        return meta_objective(theta, omega, batch, kind, inner)

    return loss


def run_suites(seed: int = 0, corrupt: float = 1.0, step: float = 1e-5) -> List[SuiteResult]:
    """
    运行全部梯度检验

    Args:
        seed: 随机种子
        corrupt: 解析梯度的缩放因子（1 表示不破坏）
        step: 差分步长

    Returns:
        每个套件的结果
    """
    analytic = corrupted_gradient(corrupt)
    results = []

    params = composite_params(seed)
    results.append(
        SuiteResult("diffcore.first_order", finite_difference_check(composite_loss, params, step, 1e-6, analytic))
    )
    results.append(
        SuiteResult(
            "diffcore.second_order",
            finite_difference_check(gradient_norm(composite_loss), params, step, 1e-5, analytic),
        )
    )

    data = tiny_tasks(seed, 1)[0]
    for kind in (ModulationKind.FILM, ModulationKind.SIGMOID, ModulationKind.SOFTMAX):
        report = finite_difference_check(network_loss(kind, data), tiny_network(kind, seed), step, 1e-6, analytic)
        results.append(SuiteResult(f"networks.{kind.value}", report))

    inner = InnerConfig(alpha=0.01, train_steps=1)
    batch = tiny_tasks(seed, 2)
    report = finite_difference_check(
        meta_loss(ModulationKind.FILM, batch, inner), tiny_network(ModulationKind.FILM, seed), step, 1e-5, analytic
    )
    results.append(SuiteResult("meta.second_order", report))

    for result in results:
        logger.info(
            "%s: 最大相对误差 %.3e (%s)", result.name, result.report.max_rel_error, result.report.worst_entry
        )
    return results
