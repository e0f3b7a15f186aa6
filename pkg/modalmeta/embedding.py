#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
任务嵌入分析
幂迭代 + 降维求前两个主成分，最近质心分类衡量按模态聚类的程度。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class PcaResult:
    """
    Attributes:
        coords: [n, 2] 投影坐标
        components: [2, d] 主成分（单位长度、相互正交）
        variances: 两个主成分方向上的投影方差
        degenerate: 输入方差为零时为 True，此时坐标全为零
    """

    coords: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    degenerate: bool = False


def _largest(
    matrix: np.ndarray, init: np.ndarray, orth: np.ndarray, max_iterations: int, tol: float
) -> Tuple[float, np.ndarray]:
    v = init / np.linalg.norm(init)
    w = 0.0
    for _ in range(max_iterations):
        if orth.size:
            v = v - orth.T @ (orth @ v)
            norm = np.linalg.norm(v)
            if norm == 0.0:
                break
            v = v / norm
        y = matrix @ v
        w = float(v @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            break
        converged = np.linalg.norm(y - w * v) <= tol * max(abs(w), 1e-300)
        v = y / norm
        if converged:
            break
    return w, v


def _orthogonal_fallback(orth: np.ndarray, dim: int) -> np.ndarray:
    for axis in range(dim):
        e = np.zeros(dim)
        e[axis] = 1.0
        e = e - orth.T @ (orth @ e)
        norm = np.linalg.norm(e)
        if norm > 1e-6:
            return e / norm
    raise ValueError("无法构造正交方向")


def pca_project(
    embeddings: np.ndarray, max_iterations: int = 2000, tol: float = 1e-12, seed: int = 0
) -> PcaResult:
    """
    投影到协方差矩阵的前两个特征向量

    中心化后用幂迭代求最大特征向量，再在其正交补上求第二个；
    每个主成分把绝对值最大的分量定为正。

    Args:
        embeddings: [n, d]，n ≥ 2
    """
    data = np.asarray(embeddings, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"pca_project: 至少需要两行二维数据，实际形状 {data.shape}")
    n, dim = data.shape
    centered = data - data.mean(axis=0)
    # 各行相同但均值不可精确表示时，中心化残差只剩舍入误差
    if np.abs(centered).max() <= 1e-12 * max(1.0, float(np.abs(data).max())):
        logger.warning("pca_project: 输入方差为零，返回全零坐标")
        components = np.zeros((2, dim))
        return PcaResult(np.zeros((n, 2)), components, np.zeros(2), degenerate=True)

    covariance = centered.T @ centered / (n - 1)
    rng = np.random.default_rng(seed)
    components = np.zeros((0, dim))
    for _ in range(min(2, dim)):
        _, v = _largest(covariance, rng.standard_normal(dim), components, max_iterations, tol)
        # 与已有主成分再正交两次，消除幂迭代残留
        for _ in range(2):
            v = v - components.T @ (components @ v)
        norm = np.linalg.norm(v)
        v = _orthogonal_fallback(components, dim) if norm < 1e-8 else v / norm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components = np.vstack([components, v])
    if components.shape[0] < 2:
        components = np.vstack([components, np.zeros(dim)])

    coords = centered @ components.T
    variances = coords.var(axis=0, ddof=1)
    return PcaResult(coords=coords, components=components, variances=variances)


def centroid_purity(
    embeddings: np.ndarray, mode_labels: Sequence[int], n_modes: Optional[int] = None
) -> float:
    """
    最近质心分类准确率

    每个模态求质心，每行归到欧氏距离最近的质心（距离相同取编号小的模态），
    返回分类正确的比例。

    Args:
        embeddings: [n, d]
        mode_labels: 每行的模态编号
        n_modes: 模态总数；给出时每个模态都必须至少出现一次
    """
    data = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(mode_labels, dtype=np.int64)
    if data.ndim != 2 or data.shape[0] != labels.shape[0] or data.shape[0] == 0:
        raise ValueError(f"centroid_purity: 嵌入 {data.shape} 与标签 {labels.shape} 不匹配")
    modes = list(range(n_modes)) if n_modes is not None else sorted(set(labels.tolist()))
    missing = [m for m in modes if not np.any(labels == m)]
    if missing:
        raise ValueError(f"centroid_purity: 缺少模态 {missing}")
    centroids = np.stack([data[labels == m].mean(axis=0) for m in modes])
    distances = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = np.asarray(modes)[np.argmin(distances, axis=1)]
    return float(np.mean(predicted == labels))
