#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
网络结构
- 基学习器 f(x; θ, τ)：全连接块，按块对预激活做调制
- 任务编码器：双向 GRU，输出任务嵌入 υ
- 调制生成器：每个块一个单隐层 MLP，由 υ 生成 τ
"""

import logging
from typing import List, Sequence

import numpy as np

from .config import ModulationKind, NetworkConfig
from .diffcore import (
    Expr,
    Operand,
    ParamSet,
    ShapeError,
    add,
    concat,
    constant,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    sub,
    tanh,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ModulationKind",
    "block_widths",
    "encode_task",
    "forward",
    "generate_modulation",
    "init_encoder",
    "init_learner",
]

GRU_GATES = ("z", "r", "n")
DIRECTIONS = ("fwd", "bwd")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_learner(widths: Sequence[int], rng: np.random.Generator) -> ParamSet:
    """
    初始化基学习器参数 θ

    Args:
        widths: 各层宽度，例如 [1, 100, 100, 100, 100, 1] 表示 5 个块
        rng: 随机流

    Returns:
        ParamSet，命名为 block{i}.weight / block{i}.bias
    """
    if len(widths) < 2:
        raise ValueError(f"init_learner: widths 至少需要两项，实际 {list(widths)}")
    if any(int(w) < 1 for w in widths):
        raise ValueError(f"init_learner: 宽度不能为 0: {list(widths)}")
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        arrays[f"block{i}.weight"] = _glorot(rng, int(fan_in), int(fan_out))
        arrays[f"block{i}.bias"] = np.zeros(int(fan_out))
    return ParamSet.from_arrays(arrays)


def block_widths(theta: ParamSet) -> List[int]:
    """每个块的输出宽度"""
    widths = []
    i = 0
    while f"block{i}.weight" in theta:
        widths.append(int(theta[f"block{i}.weight"].shape[1]))
        i += 1
    return widths


def _modulate(pre: Expr, tau: ParamSet, kind: ModulationKind, i: int) -> Expr:
    if kind is ModulationKind.NONE:
        return pre
    if kind is ModulationKind.FILM:
        gamma, beta = tau[f"block{i}.gamma"], tau[f"block{i}.beta"]
        if gamma.shape != pre.shape[-1:] or beta.shape != pre.shape[-1:]:
            raise ShapeError(
                f"forward: 块 {i} 的 FiLM 宽度 {gamma.shape}/{beta.shape} 与预激活 {pre.shape} 不符"
            )
        return add(mul(pre, gamma), beta)
    gate = tau[f"block{i}.gate"]
    if gate.shape != pre.shape[-1:]:
        raise ShapeError(f"forward: 块 {i} 的门控宽度 {gate.shape} 与预激活 {pre.shape} 不符")
    return mul(pre, gate)


def forward(theta: ParamSet, tau: ParamSet, kind: ModulationKind, x: Operand) -> Expr:
    """
    基学习器前向

    每个块：F = h·W + b，再调制（FiLM: F⊙γ+β，门控: F⊙τ），
    除最后一块外接 ReLU。调制作用于包括输出块在内的每一块。

    Args:
        theta: 学习器参数
        tau: 调制参数（kind 为 none 时可为空）
        kind: 调制方式
        x: 形状 [B, 1] 的输入

    Returns:
        形状 [B, 1] 的预测
    """
    kind = ModulationKind(kind)
    h = x if isinstance(x, Expr) else constant(x)
    n_blocks = len(block_widths(theta))
    if n_blocks == 0:
        raise ShapeError("forward: 学习器没有任何块")
    for i in range(n_blocks):
        pre = add(matmul(h, theta[f"block{i}.weight"]), theta[f"block{i}.bias"])
        pre = _modulate(pre, tau, kind, i)
        h = relu(pre) if i < n_blocks - 1 else pre
    return h


def init_encoder(
    config: NetworkConfig,
    kind: ModulationKind,
    rng: np.random.Generator,
    learner_widths: Sequence[int] = (),
) -> ParamSet:
    """
    初始化 ω = (ω_f, ω_g)

    GRU 权重 ~ U(-1/√H, 1/√H)，偏置为 0；调制生成器隐层为 Glorot 初始化，
    输出层全零，使训练从恒等调制开始。
    """
    kind = ModulationKind(kind)
    hidden = config.hidden_size
    widths = list(learner_widths) or list(config.widths)
    bound = 1.0 / np.sqrt(hidden)
    arrays = {}
    for direction in DIRECTIONS:
        for gate in GRU_GATES:
            prefix = f"encoder.{direction}"
            arrays[f"{prefix}.w_{gate}"] = rng.uniform(-bound, bound, size=(2, hidden))
            arrays[f"{prefix}.u_{gate}"] = rng.uniform(-bound, bound, size=(hidden, hidden))
            arrays[f"{prefix}.b_{gate}"] = np.zeros(hidden)
    if kind is not ModulationKind.NONE:
        per_unit = 2 if kind is ModulationKind.FILM else 1
        for i, width in enumerate(widths[1:]):
            prefix = f"modulator.block{i}"
            arrays[f"{prefix}.w1"] = _glorot(rng, 2 * hidden, config.modulator_hidden)
            arrays[f"{prefix}.b1"] = np.zeros(config.modulator_hidden)
            arrays[f"{prefix}.w2"] = np.zeros((config.modulator_hidden, per_unit * width))
            arrays[f"{prefix}.b2"] = np.zeros(per_unit * width)
    return ParamSet.from_arrays(arrays)


def _gru_pass(omega: ParamSet, direction: str, sequence: Expr) -> Expr:
    prefix = f"encoder.{direction}"
    hidden = omega[f"{prefix}.u_z"].shape[0]
    steps = sequence.shape[0]
    # 输入投影一次算完，逐步切片
    projected = {
        gate: add(matmul(sequence, omega[f"{prefix}.w_{gate}"]), omega[f"{prefix}.b_{gate}"])
        for gate in GRU_GATES
    }
    order = range(steps) if direction == "fwd" else range(steps - 1, -1, -1)
    h: Expr = constant(np.zeros((1, hidden)))
    for t in order:
        x_z, x_r, x_n = (slice_axis(projected[g], 0, t, t + 1) for g in GRU_GATES)
        z = sigmoid(add(x_z, matmul(h, omega[f"{prefix}.u_z"])))
        r = sigmoid(add(x_r, matmul(h, omega[f"{prefix}.u_r"])))
        n = tanh(add(x_n, matmul(mul(r, h), omega[f"{prefix}.u_n"])))
        h = add(mul(sub(1.0, z), n), mul(z, h))
    return h


def encode_task(omega: ParamSet, support_x: np.ndarray, support_y: np.ndarray) -> Expr:
    """
    双向 GRU 编码支持集，返回两个方向最后隐状态的拼接 υ（维度 2H）

    Args:
        omega: 编码器参数
        support_x: [K, 1]
        support_y: [K, 1]
    """
    support_x = np.asarray(support_x, dtype=np.float64).reshape(-1, 1)
    support_y = np.asarray(support_y, dtype=np.float64).reshape(-1, 1)
    if support_x.shape[0] == 0:
        raise ValueError("encode_task: 支持集为空")
    if support_x.shape != support_y.shape:
        raise ShapeError(f"encode_task: x {support_x.shape} 与 y {support_y.shape} 数量不一致")
    sequence = constant(np.concatenate([support_x, support_y], axis=1))
    states = [_gru_pass(omega, direction, sequence) for direction in DIRECTIONS]
    joined = concat(states, axis=1)
    return reshape(joined, (joined.shape[1],))


def _modulator_blocks(omega: ParamSet) -> int:
    count = 0
    while f"modulator.block{count}.w2" in omega:
        count += 1
    return count


def generate_modulation(omega: ParamSet, upsilon: Expr, kind: ModulationKind) -> ParamSet:
    """
    由任务嵌入生成各块的调制参数 τ

    FiLM: γ = 1 + raw_γ, β = raw_β；Sigmoid: τ = σ(raw)；Softmax: 块内 softmax。
    kind 为 none 时返回空集合。
    """
    kind = ModulationKind(kind)
    if kind is ModulationKind.NONE:
        return ParamSet()
    n_blocks = _modulator_blocks(omega)
    if n_blocks == 0:
        raise ValueError(f"generate_modulation: ω 中没有调制生成器，无法生成 {kind.value} 调制")
    row = reshape(upsilon, (1, upsilon.shape[-1]))
    tau = []
    for i in range(n_blocks):
        prefix = f"modulator.block{i}"
        hidden = relu(add(matmul(row, omega[f"{prefix}.w1"]), omega[f"{prefix}.b1"]))
        raw = add(matmul(hidden, omega[f"{prefix}.w2"]), omega[f"{prefix}.b2"])
        raw = reshape(raw, (raw.shape[1],))
        if kind is ModulationKind.FILM:
            width = raw.shape[0] // 2
            tau.append((f"block{i}.gamma", add(1.0, slice_axis(raw, 0, 0, width))))
            tau.append((f"block{i}.beta", slice_axis(raw, 0, width, 2 * width)))
        elif kind is ModulationKind.SIGMOID:
            tau.append((f"block{i}.gate", sigmoid(raw)))
        else:
            tau.append((f"block{i}.gate", softmax(raw, axis=0)))
    return ParamSet(tau)
