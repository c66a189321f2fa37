"""
losses.py - 训练目标函数

功能说明:
    前向系统和反馈系统使用同一个损失:
        L_total = ½ · (L_1 + L_2)
    其中 L_1 是逐像素交叉熵（softmax头）或二元交叉熵（sigmoid头），
    L_2 是按类别加权的Dice损失。

实现说明:
    - 网络输出已经过输出头，这里接收的是概率图
    - 交叉熵对概率做 [1e-12, 1−1e-12] 截断，截断区间外梯度为0
    - 交叉熵的归一化沿类别轴（标准逐像素形式），对批和像素取平均
    - Dice的分子分母都加平滑项 ε=1e-6，空预测对空标签时得1

使用例子:
    target = one_hot(labels, n_classes=4, head="softmax")
    with Tape() as tape:
        y_hat, _ = forward_pass(S, x, h0)
        loss = segmentation_loss(y_hat, target)
    tape.backward(loss)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.core import make_output
from ..utils import config
from ..utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

Scalar = Union[Tensor, float]


@dataclass(frozen=True)
class ClassWeights:
    """每个类别（含背景类0）的Dice权重 γ_k，均为正数"""

    gammas: Tuple[float, ...]

    def __post_init__(self):
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ConfigError(f"class weights must be positive, got {self.gammas}")

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassWeights":
        return cls(tuple([1.0] * n_classes))

    @classmethod
    def from_sequence(cls, values: Optional[Sequence[float]], n_classes: int) -> "ClassWeights":
        if values is None:
            return cls.uniform(n_classes)
        weights = cls(tuple(float(v) for v in values))
        if len(weights.gammas) != n_classes:
            raise ConfigError(f"expected {n_classes} class weights, got {len(weights.gammas)}")
        return weights


def one_hot(labels: np.ndarray, n_classes: int, head: str = "softmax") -> Tensor:
    """
    类别索引图 → one-hot张量

    参数:
        labels: (n, H, W) 整数标签
        n_classes: 网络输出通道数
        head: softmax → (n, n_classes, H, W)；sigmoid → (n, 1, H, W)，前景为 label==1

    异常:
        ShapeError: 标签超出类别范围
    """
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeError(f"labels must be (n, H, W), got {labels.shape}")
    if head == "sigmoid":
        if labels.max(initial=0) > 1:
            raise ShapeError("sigmoid head expects binary labels")
        return Tensor((labels == 1)[:, None].astype(np.float64))
    if labels.max(initial=0) >= n_classes or labels.min(initial=0) < 0:
        raise ShapeError(f"label values must lie in [0, {n_classes}), got [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], n_classes) + labels.shape[1:], dtype=np.float64)
    np.put_along_axis(out, labels[:, None].astype(np.int64), 1.0, axis=1)
    return Tensor(out)


def _check_target(probs: Tensor, target: Tensor) -> None:
    if probs.shape != target.shape:
        raise ShapeError(f"prediction {probs.shape} and target {target.shape} shapes differ")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ShapeError("target must be one-hot (entries 0 or 1)")
    if t.shape[1] > 1 and not np.all(t.sum(axis=1) == 1.0):
        raise ShapeError("target must be one-hot (exactly one class per pixel)")


def cross_entropy_loss(probs: Tensor, target: Tensor, clamp: float = config.PROB_CLAMP) -> Tensor:
    """
    L_1: 逐像素交叉熵，对批和像素求平均

    单通道（sigmoid头）时为二元交叉熵。
    """
    _check_target(probs, target)
    p = probs.data
    v = target.data
    pc = np.clip(p, clamp, 1.0 - clamp)
    inside = (p >= clamp) & (p <= 1.0 - clamp)
    n, c, h, w = p.shape
    count = n * h * w

    if c == 1:
        value = -np.sum(v * np.log(pc) + (1.0 - v) * np.log(1.0 - pc)) / count
    else:
        value = -np.sum(v * np.log(pc)) / count

    def backward(g: np.ndarray):
        if c == 1:
            dp = -(v / pc - (1.0 - v) / (1.0 - pc)) / count
        else:
            dp = -(v / pc) / count
        return (g * dp * inside,)

    return make_output(np.array(value), (probs,), backward)


def dice_loss(probs: Tensor, target: Tensor, weights: Optional[ClassWeights] = None,
              smooth: float = config.DICE_SMOOTH) -> Tensor:
    """
    L_2 = 1 − (1/Σγ_k) · Σ_k γ_k · (2·Σ_i u v + ε) / (Σ_i u + Σ_i v + ε)

    求和范围是整个批里的所有像素。
    """
    _check_target(probs, target)
    c = probs.shape[1]
    weights = weights or ClassWeights.uniform(c)
    if len(weights.gammas) != c:
        raise ShapeError(f"{len(weights.gammas)} class weights for {c} output channels")
    gam = np.asarray(weights.gammas, dtype=np.float64)
    u = probs.data
    v = target.data
    axes = (0, 2, 3)
    inter = np.sum(u * v, axis=axes)
    denom = np.sum(u, axis=axes) + np.sum(v, axis=axes) + smooth
    dice = (2.0 * inter + smooth) / denom
    value = 1.0 - np.sum(gam * dice) / gam.sum()

    def backward(g: np.ndarray):
        num = 2.0 * inter + smooth
        d_dice = (2.0 * v * denom[None, :, None, None] - num[None, :, None, None]) / (denom ** 2)[None, :, None, None]
        return (-g * (gam / gam.sum())[None, :, None, None] * d_dice,)

    return make_output(np.array(value), (probs,), backward)


def total_loss(l1: Scalar, l2: Scalar) -> Tensor:
    """L_total = ½ · (L_1 + L_2)"""
    l1 = l1 if isinstance(l1, Tensor) else Tensor(np.array(float(l1)))
    l2 = l2 if isinstance(l2, Tensor) else Tensor(np.array(float(l2)))
    return ops.scale(ops.add(l1, l2), 0.5)


def segmentation_loss(probs: Tensor, target: Tensor, weights: Optional[ClassWeights] = None) -> Tensor:
    """训练用的完整目标: total_loss(交叉熵, Dice)"""
    return total_loss(cross_entropy_loss(probs, target), dice_loss(probs, target, weights))
