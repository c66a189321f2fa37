"""
normalization.py - 图像z-score归一化

统计量只在训练划分上计算一次，验证集/测试集原样套用，不重新计算。
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def compute_stats(images: np.ndarray) -> NormStats:
    """
    训练划分的全局均值和标准差（总体标准差）

    异常:
        DataError: 空数据或常数图像（std = 0）
    """
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        raise DataError("cannot compute normalization statistics of an empty dataset")
    std = float(images.std())
    if not std > 0.0:
        raise DataError("training images are constant (std = 0); cannot normalize")
    stats = NormStats(float(images.mean()), std)
    logger.debug(f"normalization stats: mean={stats.mean:.6f} std={stats.std:.6f}")
    return stats


def normalize(images: np.ndarray, stats: NormStats) -> np.ndarray:
    if not stats.std > 0.0:
        raise DataError(f"normalization std must be positive, got {stats.std}")
    return (np.asarray(images, dtype=np.float64) - stats.mean) / stats.std


def denormalize(images: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) * stats.std + stats.mean
