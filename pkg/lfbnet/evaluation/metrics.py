"""
metrics.py - 分割质量指标

功能说明:
    评估用的指标全部是纯函数，可以对不同样本任意并行计算:
    1. dice_coefficient          - Dice相似系数 2|A∩B|/(|A|+|B|)
    2. hausdorff_distance        - 边界点集之间的（100%分位）Hausdorff距离，单位mm
    3. relative_volume_difference - |V_pred − V_ref| / V_ref
    4. plausibility_check        - 每个类别的连通分量数和孔洞数（4连通）

掩码约定:
    BinaryMask 是2D网格，或者由2D切片堆叠成的"体"（第0轴为切片），
    spacing 给出每个轴的物理间距（mm）。3D时边界用6连通腐蚀求取。

边界情况:
    - 两个掩码都为空时 Dice = 1
    - 任一掩码为空时 Hausdorff距离无定义，返回 None
    - 参考掩码为空时 RVD 抛出异常

使用例子:
    pred = BinaryMask(labels_pred == 2, spacing=(1.0, 1.0))
    ref = BinaryMask(labels_ref == 2, spacing=(1.0, 1.0))
    dice_coefficient(pred, ref)
    hausdorff_distance(pred, ref)   # None 表示无定义
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..utils.errors import DataError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class BinaryMask:
    """二值掩码及其物理像素间距"""

    data: np.ndarray
    spacing: Tuple[float, ...] = ()

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim not in (2, 3):
            raise ShapeError(f"mask must be 2D or a stack of 2D slices, got shape {self.data.shape}")
        if not self.spacing:
            self.spacing = (1.0,) * self.data.ndim
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != self.data.ndim or any(s <= 0 for s in self.spacing):
            raise ShapeError(f"spacing {self.spacing} must be positive with one entry per axis")

    @property
    def count(self) -> int:
        return int(self.data.sum())

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))


def _check_grids(pred: BinaryMask, ref: BinaryMask) -> None:
    if pred.data.shape != ref.data.shape:
        raise ShapeError(f"mask grids differ: {pred.data.shape} vs {ref.data.shape}")


def dice_coefficient(pred: BinaryMask, ref: BinaryMask) -> float:
    _check_grids(pred, ref)
    total = pred.count + ref.count
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(pred.data, ref.data).sum()) / total


def boundary(mask: BinaryMask) -> np.ndarray:
    """
    边界点（物理坐标）

    边界 = 掩码 − 腐蚀(掩码)，网格外视为背景，所以贴边的像素也算边界。
    """
    structure = ndimage.generate_binary_structure(mask.data.ndim, 1)
    eroded = ndimage.binary_erosion(mask.data, structure=structure, border_value=0)
    points = np.argwhere(mask.data & ~eroded).astype(np.float64)
    return points * np.asarray(mask.spacing)[None, :]


def hausdorff_distance(pred: BinaryMask, ref: BinaryMask) -> Optional[float]:
    """
    两个掩码边界点集之间的对称Hausdorff距离（欧氏距离，物理单位）

    返回:
        距离（mm）；任一掩码为空时返回 None（无定义）
    """
    _check_grids(pred, ref)
    if pred.count == 0 or ref.count == 0:
        return None
    a = boundary(pred)
    b = boundary(ref)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(max(d_ab.max(), d_ba.max()))


def signed_volume_difference(pred: BinaryMask, ref: BinaryMask) -> float:
    """(V_pred − V_ref) / V_ref，带符号，仅用于诊断"""
    _check_grids(pred, ref)
    if ref.count == 0:
        raise DataError("relative volume difference undefined for an empty reference mask")
    v_ref = ref.count * ref.voxel_volume
    return (pred.count * pred.voxel_volume - v_ref) / v_ref


def relative_volume_difference(pred: BinaryMask, ref: BinaryMask) -> float:
    return abs(signed_volume_difference(pred, ref))


# ============================================================
# 合理性检查
# ============================================================
@dataclass
class PlausibilityReport:
    """每个前景类别的连通分量数和封闭孔洞数"""

    components: Dict[int, int] = field(default_factory=dict)
    holes: Dict[int, int] = field(default_factory=dict)

    def violations(self, reference: "PlausibilityReport") -> int:
        """与参考标签图相比多出/缺少的分量和孔洞总数"""
        total = 0
        for k in set(self.components) | set(reference.components):
            total += abs(self.components.get(k, 0) - reference.components.get(k, 0))
            total += abs(self.holes.get(k, 0) - reference.holes.get(k, 0))
        return total


_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def count_holes(mask: np.ndarray) -> int:
    """不接触网格边缘的背景连通分量个数（4连通）"""
    background, n = ndimage.label(~mask, structure=_FOUR_CONNECTED)
    if n == 0:
        return 0
    edge = np.concatenate([background[0], background[-1], background[:, 0], background[:, -1]])
    touching = set(np.unique(edge)) - {0}
    return n - len(touching)


def plausibility_check(label_map: np.ndarray, n_classes: Optional[int] = None) -> PlausibilityReport:
    """
    对类别索引图做合理性检查

    参数:
        label_map: 2D整数标签图
        n_classes: 类别数（含背景）；None时取标签最大值+1

    返回:
        PlausibilityReport，键为前景类别 1..n_classes−1
    """
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise ShapeError(f"plausibility check expects a 2D label map, got {label_map.shape}")
    n_classes = n_classes if n_classes is not None else int(label_map.max(initial=0)) + 1
    report = PlausibilityReport()
    for k in range(1, n_classes):
        mask = label_map == k
        _, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
        report.components[k] = int(n)
        report.holes[k] = count_holes(mask) if n else 0
    return report


# ============================================================
# 概率图 → 标签图
# ============================================================
def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    """
    (n, c, H, W) 概率 → (n, H, W) 标签

    softmax（c≥2）取argmax；sigmoid（c=1）以0.5为阈值。
    """
    probs = np.asarray(probs)
    if probs.shape[1] == 1:
        return (probs[:, 0] >= 0.5).astype(np.uint8)
    return probs.argmax(axis=1).astype(np.uint8)
