"""
optim.py - Adam优化器

功能说明:
    带偏差修正的标准Adam更新。每个参数维护一阶矩 m 和二阶矩 v，
    状态以参数名为键，因此可以原样写入/读出检查点。

冻结约定:
    - 冻结的参数既不更新值，也不更新矩估计（逐位保持不变）
    - 步数计数器 t 每次调用恰好加 1，与冻结与否无关

使用例子:
    state = AdamState(lr=1e-3)
    adam_step(model.parameters().values(), state)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from .core import Parameter
from ..utils import config
from ..utils.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam优化器状态：每个参数的矩估计、步数和超参数"""

    lr: float = config.LEARNING_RATE
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """
    对一组参数执行一次Adam更新

    参数:
        params: 参数集合（冻结的会被跳过）
        state: AdamState，会被原地更新

    异常:
        ShapeError: 某个未冻结参数还没有梯度（报告参数名）
    """
    params = list(params)
    for p in params:
        if not p.frozen and p.grad is None:
            raise ShapeError(f"adam_step: parameter {p.name!r} has no gradient")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for p in params:
        if p.frozen:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        # 参数更新: p -= lr · m̂ / (sqrt(v̂) + eps)
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
