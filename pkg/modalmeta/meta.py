#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
元训练
内循环梯度适应、元目标、Adam 元优化器，以及 MAML / Multi-MAML / MuMoMAML 三种训练器。
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .checkpoint import Checkpoint, MomentSnapshot
from .config import ExperimentConfig, GradientOrder, InnerConfig, ModulationKind, TrainerKind
from .diffcore import Expr, ParamSet, detach, gradient, reduce_mean, scale, square, sub
from .networks import encode_task, forward, generate_modulation, init_encoder, init_learner
from .taskgen import StreamPurpose, Task, TaskData, sample_task_batch, task_stream

logger = logging.getLogger(__name__)

ForwardFn = Callable[[ParamSet, ParamSet, ModulationKind, Union[Expr, np.ndarray]], Expr]


class DivergenceError(RuntimeError):
    """外循环损失不是有限数"""


class RoutingError(IndexError):
    """Multi-MAML 模态编号越界"""


def mse(prediction: Expr, target: Union[Expr, np.ndarray]) -> Expr:
    return reduce_mean(square(sub(prediction, target)))


# ---------------------------------------------------------------------------
# 内循环
# ---------------------------------------------------------------------------


def inner_adapt(
    theta: ParamSet,
    tau: ParamSet,
    kind: ModulationKind,
    support_x: np.ndarray,
    support_y: np.ndarray,
    alpha: float,
    steps: int,
    first_order: bool = False,
    forward_fn: ForwardFn = forward,
) -> ParamSet:
    """
    在支持集上做 steps 步梯度下降：θ ← θ − α·∇θ MSE

    τ 在内循环中保持不变。二阶模式下返回的表达式对原始 θ（以及经由 τ 对 ω）
    仍可求导；一阶模式下内循环梯度被截断。
    """
    current = theta
    for _ in range(steps):
        loss = mse(forward_fn(current, tau, kind, support_x), support_y)
        grads = gradient(loss, current)
        current = ParamSet(
            (name, sub(param, scale(detach(grads[name]) if first_order else grads[name], alpha)))
            for name, param in current.items()
        )
    return current


def adaptation_trajectory(
    theta: ParamSet,
    tau: ParamSet,
    kind: ModulationKind,
    support_x: np.ndarray,
    support_y: np.ndarray,
    alpha: float,
    steps: int,
    forward_fn: ForwardFn = forward,
) -> List[ParamSet]:
    """评估用的内循环：返回 0..steps 步后的参数（均为脱离计算图的叶子）"""
    tau = tau.detached()
    current = theta.detached()
    trajectory = [current]
    for _ in range(steps):
        loss = mse(forward_fn(current, tau, kind, support_x), support_y)
        grads = gradient(loss, current)
        current = ParamSet.from_arrays(
            {name: param.value - alpha * grads[name].value for name, param in current.items()}
        )
        trajectory.append(current)
    return trajectory


# ---------------------------------------------------------------------------
# 元目标
# ---------------------------------------------------------------------------


def task_modulation(omega: Optional[ParamSet], kind: ModulationKind, data: TaskData) -> ParamSet:
    """编码支持集并生成 τ；没有 ω 或不调制时为空"""
    if omega is None or ModulationKind(kind) is ModulationKind.NONE:
        return ParamSet()
    return generate_modulation(omega, encode_task(omega, data.support_x, data.support_y), kind)


def task_objective(
    theta: ParamSet,
    omega: Optional[ParamSet],
    data: TaskData,
    kind: ModulationKind,
    inner: InnerConfig,
    order: GradientOrder = GradientOrder.SECOND,
    forward_fn: ForwardFn = forward,
) -> Expr:
    """单个任务的查询集损失 L(f(x; θ', τ); D_val)"""
    tau = task_modulation(omega, kind, data)
    adapted = inner_adapt(
        theta,
        tau,
        kind,
        data.support_x,
        data.support_y,
        inner.alpha,
        inner.train_steps,
        first_order=GradientOrder(order) is GradientOrder.FIRST,
        forward_fn=forward_fn,
    )
    return mse(forward_fn(adapted, tau, kind, data.query_x), data.query_y)


def meta_objective(
    theta: ParamSet,
    omega: Optional[ParamSet],
    batch: Sequence[TaskData],
    kind: ModulationKind,
    inner: InnerConfig,
    order: GradientOrder = GradientOrder.SECOND,
    forward_fn: ForwardFn = forward,
) -> Expr:
    """一批任务查询集损失的均值（标量表达式）"""
    if not batch:
        raise ValueError("meta_objective: 任务批为空")
    losses = [task_objective(theta, omega, data, kind, inner, order, forward_fn) for data in batch]
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """每个参数的一阶/二阶矩与步数"""

    step: int
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: ParamSet) -> "AdamState":
        return cls(
            step=0,
            m={name: np.zeros(expr.shape) for name, expr in params.items()},
            v={name: np.zeros(expr.shape) for name, expr in params.items()},
        )


def adam_update(
    params: ParamSet,
    grads: Mapping[str, Union[Expr, np.ndarray]],
    state: AdamState,
    meta_lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[ParamSet, AdamState]:
    """
    带偏差修正的 Adam 更新

    Returns:
        (新参数, 新状态)，输入均不被修改
    """
    beta1, beta2 = betas
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, param in params.items():
        g = grads[name]
        g = np.asarray(g.value if isinstance(g, Expr) else g, dtype=np.float64)
        if g.shape != param.shape:
            raise ValueError(f"adam_update: {name} 的梯度形状 {g.shape} 与参数 {param.shape} 不符")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params[name] = param.value - meta_lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return ParamSet.from_arrays(new_params), AdamState(step=step, m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# 模型与训练
# ---------------------------------------------------------------------------


@dataclass
class MetaModel:
    """
    元学习模型

    Attributes:
        trainer: 训练器类型
        kind: 调制方式
        learners: 基学习器参数；Multi-MAML 每个模态一个，其余只有一个
        omega: 编码器与调制生成器参数（仅 MuMoMAML）
    """

    trainer: TrainerKind
    kind: ModulationKind
    learners: List[ParamSet]
    omega: Optional[ParamSet] = None

    def route(self, mode_index: int) -> ParamSet:
        if self.trainer is TrainerKind.MULTI_MAML:
            return multi_maml_route(mode_index, self.learners)
        return self.learners[0]

    def groups(self) -> Dict[str, ParamSet]:
        groups = {f"learner.{m}": learner for m, learner in enumerate(self.learners)}
        if self.omega is not None:
            groups["omega"] = self.omega
        return groups


def multi_maml_route(mode_index: int, learners: Sequence[ParamSet]) -> ParamSet:
    """按真实模态编号选择对应的 MAML 学习器"""
    if not 0 <= mode_index < len(learners):
        raise RoutingError(f"multi_maml_route: 模态 {mode_index} 超出范围 [0, {len(learners)})")
    return learners[mode_index]


def init_model(config: ExperimentConfig, seed: Optional[int] = None) -> MetaModel:
    """按配置初始化模型；学习器 m 使用计数器 m 的随机流，ω 使用独立的流"""
    seed = config.seed if seed is None else seed
    trainer = config.meta.trainer
    kind = config.meta.modulation
    widths = config.network.widths
    n_learners = len(config.distribution.modes) if trainer is TrainerKind.MULTI_MAML else 1
    learners = [
        init_learner(widths, task_stream(seed, StreamPurpose.INIT_LEARNER, m)) for m in range(n_learners)
    ]
    omega = None
    if trainer is TrainerKind.MUMOMAML:
        omega = init_encoder(config.network, kind, task_stream(seed, StreamPurpose.INIT_ENCODER, 0), widths)
    return MetaModel(trainer=trainer, kind=kind, learners=learners, omega=omega)


def init_states(model: MetaModel) -> Dict[str, AdamState]:
    return {group: AdamState.zeros(params) for group, params in model.groups().items()}


@dataclass
class TrainRecord:
    iteration: int
    mean_loss: float
    wall_time: float


@dataclass
class TrainLog:
    records: List[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError(f"迭代编号必须递增: {record.iteration}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.iteration, r.mean_loss, r.wall_time) for r in self.records],
            columns=["iteration", "mean_loss", "wall_time"],
        )


@dataclass
class TaskGradients:
    route: int
    loss: float
    learner: Dict[str, np.ndarray]
    omega: Dict[str, np.ndarray]


def _task_gradients(
    model: MetaModel, task: Task, data: TaskData, inner: InnerConfig, order: GradientOrder
) -> TaskGradients:
    route = task.mode_index if model.trainer is TrainerKind.MULTI_MAML else 0
    theta = model.route(task.mode_index)
    loss = task_objective(theta, model.omega, data, model.kind, inner, order)
    wrt = theta if model.omega is None else theta.merged(model.omega)
    grads = gradient(loss, wrt).arrays()
    learner = {name: grads[name] for name in theta}
    omega = {} if model.omega is None else {name: grads[name] for name in model.omega}
    return TaskGradients(route=route, loss=float(loss.value), learner=learner, omega=omega)


def _mean_arrays(items: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    # 固定按任务顺序累加，结果与线程数无关
    total = {name: array.copy() for name, array in items[0].items()}
    for item in items[1:]:
        for name, array in item.items():
            total[name] = total[name] + array
    return {name: array / len(items) for name, array in total.items()}


def meta_train_step(
    model: MetaModel,
    states: Dict[str, AdamState],
    config: ExperimentConfig,
    seed: int,
    iteration: int,
    threads: int = 1,
    started: Optional[float] = None,
) -> Tuple[MetaModel, Dict[str, AdamState], TrainRecord]:
    """
    一次元训练迭代

    抽取 meta_batch 个任务（随机流计数器为 iteration*meta_batch+j），并行计算每个任务
    的元梯度，按任务顺序归约后分别对各学习器与 ω 做一次 Adam 更新。
    所有梯度都在更新前的同一点上求得。
    """
    meta = config.meta
    batch = sample_task_batch(
        config.distribution, seed, StreamPurpose.TRAIN, iteration * meta.meta_batch, meta.meta_batch
    )

    def work(item: Tuple[Task, TaskData]) -> TaskGradients:
        return _task_gradients(model, item[0], item[1], config.inner, meta.order)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, batch))
    else:
        results = [work(item) for item in batch]

    total_loss = 0.0
    for result in results:
        total_loss += result.loss
    mean_loss = total_loss / len(results)
    if not math.isfinite(mean_loss):
        raise DivergenceError(f"第 {iteration} 次迭代的外循环损失不是有限数: {mean_loss}")

    learners = list(model.learners)
    new_states = dict(states)
    for m in range(len(learners)):
        routed = [r.learner for r in results if r.route == m]
        if not routed:
            continue
        group = f"learner.{m}"
        learners[m], new_states[group] = adam_update(
            learners[m], _mean_arrays(routed), states[group], meta.meta_lr, meta.betas, meta.epsilon
        )
    omega = model.omega
    if omega is not None:
        omega, new_states["omega"] = adam_update(
            omega, _mean_arrays([r.omega for r in results]), states["omega"], meta.meta_lr, meta.betas, meta.epsilon
        )

    wall = 0.0 if started is None else time.perf_counter() - started
    record = TrainRecord(iteration=iteration, mean_loss=mean_loss, wall_time=wall)
    updated = MetaModel(trainer=model.trainer, kind=model.kind, learners=learners, omega=omega)
    return updated, new_states, record


@dataclass
class TrainResult:
    model: MetaModel
    states: Dict[str, AdamState]
    log: TrainLog
    iteration: int


EvalHook = Callable[[int, MetaModel], None]


def train(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    threads: int = 1,
    eval_hook: Optional[EvalHook] = None,
    progress: bool = False,
    resume: Optional[TrainResult] = None,
) -> TrainResult:
    """
    元训练主循环

    Args:
        config: 实验配置
        seed: 随机种子，默认取配置中的 seed
        threads: 每个元批次内并行计算任务的线程数
        eval_hook: 每 eval_every 次迭代调用一次的评估回调
        progress: 是否显示进度条
        resume: 从已有结果继续训练

    Returns:
        TrainResult
    """
    seed = config.seed if seed is None else seed
    if resume is None:
        model = init_model(config, seed)
        states = init_states(model)
        log = TrainLog()
        start_iteration = 0
    else:
        model, states, log, start_iteration = resume.model, resume.states, resume.log, resume.iteration

    meta = config.meta
    logger.info(
        "开始元训练: trainer=%s modulation=%s order=%s iterations=%d",
        meta.trainer.value,
        meta.modulation.value,
        meta.order.value,
        meta.iterations,
    )
    started = time.perf_counter()
    iterations = range(start_iteration, start_iteration + meta.iterations)
    for iteration in tqdm(iterations, disable=not progress, desc="meta-train"):
        model, states, record = meta_train_step(model, states, config, seed, iteration, threads, started)
        log.append(record)
        done = iteration + 1
        if eval_hook is not None and meta.eval_every > 0 and done % meta.eval_every == 0:
            eval_hook(done, model)
    return TrainResult(model=model, states=states, log=log, iteration=start_iteration + meta.iterations)


# ---------------------------------------------------------------------------
# 检查点转换
# ---------------------------------------------------------------------------


def to_checkpoint(result: TrainResult, config: ExperimentConfig) -> Checkpoint:
    return Checkpoint(
        trainer=result.model.trainer.value,
        modulation=result.model.kind.value,
        config=config.snapshot(),
        params={group: params.arrays() for group, params in result.model.groups().items()},
        optimizer={
            group: MomentSnapshot(step=state.step, m=dict(state.m), v=dict(state.v))
            for group, state in result.states.items()
        },
        iteration=result.iteration,
    )


def from_checkpoint(checkpoint: Checkpoint) -> TrainResult:
    """由检查点恢复模型与优化器状态（训练日志不在检查点中）"""
    trainer = TrainerKind(checkpoint.trainer)
    learners = []
    while f"learner.{len(learners)}" in checkpoint.params:
        learners.append(ParamSet.from_arrays(checkpoint.params[f"learner.{len(learners)}"]))
    if not learners:
        raise ValueError("检查点中没有学习器参数")
    omega = checkpoint.params.get("omega")
    model = MetaModel(
        trainer=trainer,
        kind=ModulationKind(checkpoint.modulation),
        learners=learners,
        omega=None if omega is None else ParamSet.from_arrays(omega),
    )
    states = {
        group: AdamState(step=snap.step, m=dict(snap.m), v=dict(snap.v))
        for group, snap in checkpoint.optimizer.items()
    }
    for group, params in model.groups().items():
        states.setdefault(group, AdamState.zeros(params))
    return TrainResult(model=model, states=states, log=TrainLog(), iteration=checkpoint.iteration)
