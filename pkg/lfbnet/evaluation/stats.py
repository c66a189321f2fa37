"""
stats.py - Wilcoxon符号秩检验

功能说明:
    对成对样本（例如两种方法在同一批测试样本上的Dice）做双侧检验:
    1. 差值 d = a − b，去掉恰好为0的差值
    2. |d| 按平均秩排序（并列取平均秩）
    3. W+ = 正差值的秩和，统计量 W = min(W+, W−)
    4. n ≤ 12 时枚举全部 2ⁿ 种符号组合得到精确p值；
       n > 12 时用带连续性校正和并列校正的正态近似

特殊结果:
    - 非零差值少于5个 → method="insufficient"，p值为None（不是异常）
    - 所有差值都是0（两组完全相同）→ compare_paired 报告 p=1.0，method="identical"

使用例子:
    result = wilcoxon_signed_rank(dice_lfb, dice_fs)
    if not result.insufficient and result.p_value < 0.05:
        print("显著差异")
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from ..utils import config
from ..utils.errors import ShapeError

logger = logging.getLogger(__name__)

MIN_NONZERO = 5


@dataclass(frozen=True)
class WilcoxonResult:
    """检验结果；method 为 exact | normal | insufficient | identical"""

    statistic: Optional[float]
    p_value: Optional[float]
    n: int
    method: str
    mean_difference: float = 0.0

    @property
    def insufficient(self) -> bool:
        return self.method == "insufficient"

    def significant(self, level: float = config.SIGNIFICANCE_LEVEL) -> bool:
        return self.p_value is not None and self.p_value < level


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    patterns = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    sums = patterns @ ranks
    tol = 1e-9
    lower = np.mean(sums <= w_plus + tol)
    upper = np.mean(sums >= w_plus - tol)
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_p(ranks: np.ndarray, abs_d: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(abs_d, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2.0 * sps.norm.sf(z)))


def wilcoxon_signed_rank(paired_a: Sequence[float], paired_b: Sequence[float]) -> WilcoxonResult:
    """
    双侧Wilcoxon符号秩检验

    参数:
        paired_a, paired_b: 等长的成对观测

    返回:
        WilcoxonResult；非零差值少于5个时 method="insufficient"

    异常:
        ShapeError: 两组长度不同
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be equal-length 1D sequences, got {a.shape} and {b.shape}")
    d = a - b
    mean_diff = float(d.mean()) if d.size else 0.0
    d = d[d != 0.0]
    n = int(d.size)
    if n < MIN_NONZERO:
        logger.warning(f"⚠️ Wilcoxon: only {n} nonzero differences (need {MIN_NONZERO}), test skipped")
        return WilcoxonResult(None, None, n, "insufficient", mean_diff)

    abs_d = np.abs(d)
    ranks = sps.rankdata(abs_d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    if n <= config.WILCOXON_EXACT_MAX_N:
        return WilcoxonResult(statistic, _exact_p(ranks, w_plus), n, "exact", mean_diff)
    return WilcoxonResult(statistic, _normal_p(ranks, abs_d, w_plus), n, "normal", mean_diff)


def compare_paired(paired_a: Sequence[float], paired_b: Sequence[float]) -> WilcoxonResult:
    """
    报告用的成对比较

    两组完全相同（全部差值为0）时直接给出 p=1.0，其余情况等同 wilcoxon_signed_rank。
    """
    a = np.asarray(paired_a, dtype=np.float64)
    b = np.asarray(paired_b, dtype=np.float64)
    if a.shape == b.shape and a.size and np.all(a == b):
        return WilcoxonResult(0.0, 1.0, 0, "identical", 0.0)
    return wilcoxon_signed_rank(a, b)
