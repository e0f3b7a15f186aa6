# -*- coding: utf-8 -*-
"""
modalmeta - 多模态模型无关元学习（MuMoMAML）
自带支持二阶导数的微分核心，包含 MAML / Multi-MAML 对照与评估工具。
"""

from .config import ExperimentConfig, ModulationKind, TrainerKind, load_config
from .meta import MetaModel, init_model, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "MetaModel",
    "ModulationKind",
    "TrainerKind",
    "init_model",
    "load_config",
    "train",
]
