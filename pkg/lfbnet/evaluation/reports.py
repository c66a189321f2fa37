"""
reports.py - 指标报告

功能说明:
    把逐样本、逐类别的指标整理成 MetricsReport，并用 pandas 表格写成逗号分隔文本（带表头）:
    - <name>.csv          每个 (样本, 类别) 一行
    - <name>.summary.csv  每个类别一行：均值 ± 标准差、最差值、阈值百分比

报告列:
    逐样本: id, class, dice, hd_mm, rvd, signed_vd, holes, components, violations
            （可选）dice_below, hd_above
    汇总:   class, n, dice_mean, dice_std, hd_mean, hd_std, hd_undefined,
            rvd_mean, rvd_std, dice_min, hd_max, holes_total, components_total,
            violations_total
            （可选）pct_dice_below, pct_hd_above

说明:
    - 无定义的HD写作 "undefined"，不参与均值（会记录警告）
    - 标准差为总体标准差（ddof=0）
    - 写出后会重新读取逐样本文件、重算汇总并与内存中的结果比对（容差1e-9）
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .metrics import (
    BinaryMask,
    dice_coefficient,
    hausdorff_distance,
    plausibility_check,
    signed_volume_difference,
)
from ..utils import config
from ..utils.errors import DataError, FormatError

logger = logging.getLogger(__name__)

UNDEFINED = "undefined"
ROW_FIELDS = ["id", "class", "dice", "hd_mm", "rvd", "signed_vd", "holes", "components", "violations"]
FLOAT_FIELDS = ["dice", "hd_mm", "rvd", "signed_vd"]


@dataclass(frozen=True)
class Thresholds:
    """最差情况分析阈值：Dice低于 dice 或 HD高于 hd_mm 视为失败"""

    dice: float = config.DICE_THRESHOLD
    hd_mm: float = config.HD_THRESHOLD_MM

    @classmethod
    def parse(cls, text: str) -> "Thresholds":
        """解析 "dice=0.88,hd=6.5" 形式的参数"""
        values = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, raw = part.partition("=")
            if key not in ("dice", "hd") or not raw:
                raise ValueError(f"bad threshold {part!r}, expected dice=<float> or hd=<float>")
            values["hd_mm" if key == "hd" else "dice"] = float(raw)
        return cls(**values)


@dataclass
class MetricRow:
    sample_id: str
    class_index: int
    dice: float
    hd_mm: Optional[float]
    rvd: Optional[float]
    signed_vd: Optional[float]
    holes: int
    components: int
    # 与参考标签图相比多出或缺少的分量和孔洞数
    violations: int = 0


@dataclass
class MetricsReport:
    rows: List[MetricRow] = field(default_factory=list)
    thresholds: Optional[Thresholds] = None

    def classes(self) -> List[int]:
        return sorted({r.class_index for r in self.rows})

    def aggregates(self) -> Dict[int, Dict[str, float]]:
        return aggregate_rows(self.rows, self.thresholds)

    def values(self, metric: str, class_index: int) -> Dict[str, Optional[float]]:
        """{样本id: 指标值}，用于成对检验"""
        attr = {"dice": "dice", "hd_mm": "hd_mm", "hd": "hd_mm", "rvd": "rvd"}[metric]
        return {r.sample_id: getattr(r, attr) for r in self.rows if r.class_index == class_index}

    def foreground_mean(self, metric: str) -> float:
        attr = {"dice": "dice", "hd": "hd_mm", "hd_mm": "hd_mm"}[metric]
        vals = [getattr(r, attr) for r in self.rows if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else math.nan

    def violations(self) -> int:
        return int(sum(r.violations for r in self.rows))


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate_rows(rows: Sequence[MetricRow], thresholds: Optional[Thresholds] = None) -> Dict[int, Dict[str, float]]:
    out: Dict[int, Dict[str, float]] = {}
    for k in sorted({r.class_index for r in rows}):
        sel = [r for r in rows if r.class_index == k]
        dice = [r.dice for r in sel]
        hd = [r.hd_mm for r in sel if r.hd_mm is not None]
        rvd = [r.rvd for r in sel if r.rvd is not None]
        undefined = len(sel) - len(hd)
        if undefined:
            logger.warning(f"⚠️ class {k}: {undefined} undefined Hausdorff distances excluded from the mean")
        agg = {"n": float(len(sel))}
        agg["dice_mean"], agg["dice_std"] = _mean_std(dice)
        agg["hd_mean"], agg["hd_std"] = _mean_std(hd)
        agg["hd_undefined"] = float(undefined)
        agg["rvd_mean"], agg["rvd_std"] = _mean_std(rvd)
        agg["dice_min"] = float(min(dice))
        agg["hd_max"] = float(max(hd)) if hd else math.nan
        agg["holes_total"] = float(sum(r.holes for r in sel))
        agg["components_total"] = float(sum(r.components for r in sel))
        agg["violations_total"] = float(sum(r.violations for r in sel))
        if thresholds is not None:
            agg["pct_dice_below"] = 100.0 * sum(d < thresholds.dice for d in dice) / len(sel)
            agg["pct_hd_above"] = 100.0 * sum(h > thresholds.hd_mm for h in hd) / len(sel)
        out[k] = agg
    return out


# ============================================================
# 计算
# ============================================================
def _sample_rows(sample_id: str, pred: np.ndarray, ref: np.ndarray, n_label_classes: int,
                 spacing: Tuple[float, ...]) -> List[MetricRow]:
    rows = []
    # 体数据逐切片做合理性检查再求和
    slices = [pred] if pred.ndim == 2 else list(pred)
    reports = [plausibility_check(p, n_label_classes) for p in slices]
    ref_reports = [plausibility_check(r, n_label_classes) for r in ([ref] if ref.ndim == 2 else list(ref))]
    for k in range(1, n_label_classes):
        pm = BinaryMask(pred == k, spacing)
        rm = BinaryMask(ref == k, spacing)
        svd = signed_volume_difference(pm, rm) if rm.count else None
        rows.append(MetricRow(
            sample_id=sample_id,
            class_index=k,
            dice=dice_coefficient(pm, rm),
            hd_mm=hausdorff_distance(pm, rm),
            rvd=abs(svd) if svd is not None else None,
            signed_vd=svd,
            holes=sum(r.holes[k] for r in reports),
            components=sum(r.components[k] for r in reports),
            violations=sum(abs(p.components[k] - r.components[k]) + abs(p.holes[k] - r.holes[k])
                           for p, r in zip(reports, ref_reports)),
        ))
    return rows


def evaluate_label_maps(ids: Sequence[str], predictions: Sequence[np.ndarray], references: Sequence[np.ndarray],
                        n_label_classes: int, spacing: Tuple[float, ...] = (),
                        thresholds: Optional[Thresholds] = None,
                        num_threads: int = config.NUM_THREADS) -> MetricsReport:
    """
    逐样本计算所有前景类别的指标

    参数:
        predictions / references: 2D标签图，或堆叠成体的 (k, H, W) 标签
        spacing: 每个轴的间距（mm），体数据时第一个是切片间距
        num_threads: 按样本并行的线程数（指标都是纯函数）
    """
    if not (len(ids) == len(predictions) == len(references)):
        raise DataError("ids, predictions and references must have equal lengths")
    jobs = list(zip(ids, predictions, references))

    def run(job):
        sid, pred, ref = job
        if pred.shape != ref.shape:
            raise DataError(f"sample {sid}: prediction {pred.shape} vs reference {ref.shape}")
        return _sample_rows(sid, np.asarray(pred), np.asarray(ref), n_label_classes, spacing)

    if num_threads > 1:
        with ThreadPoolExecutor(max_workers=num_threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return MetricsReport([row for rows in results for row in rows], thresholds)


# ============================================================
# 读写
# ============================================================
def _optional(value) -> Optional[float]:
    return None if pd.isna(value) else float(value)


def rows_frame(report: MetricsReport) -> pd.DataFrame:
    """逐样本报告表，None 保持为缺失值，写出时记作 "undefined" """
    frame = pd.DataFrame(
        [[r.sample_id, r.class_index, r.dice, r.hd_mm, r.rvd, r.signed_vd, r.holes, r.components, r.violations]
         for r in report.rows],
        columns=ROW_FIELDS,
    )
    frame[FLOAT_FIELDS] = frame[FLOAT_FIELDS].astype(np.float64)
    if report.thresholds is not None:
        frame["dice_below"] = (frame["dice"] < report.thresholds.dice).astype(int)
        frame["hd_above"] = (frame["hd_mm"] > report.thresholds.hd_mm).astype(int)
    return frame


def summary_frame(aggregates: Dict[int, Dict[str, float]]) -> pd.DataFrame:
    frame = pd.DataFrame.from_dict(aggregates, orient="index")
    frame.index.name = "class"
    return frame.reset_index()


def write_report(report: MetricsReport, path: str) -> Tuple[str, str]:
    """
    写出逐样本报告和汇总报告

    返回:
        (逐样本文件路径, 汇总文件路径)
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    rows_frame(report).to_csv(path, index=False, na_rep=UNDEFINED)

    aggregates = report.aggregates()
    summary_path = os.path.splitext(path)[0] + ".summary.csv"
    summary_frame(aggregates).to_csv(summary_path, index=False, na_rep="nan")

    _verify_recomputable(path, aggregates, report.thresholds)
    logger.info(f"📊 report written: {path} ({len(report.rows)} rows), summary: {summary_path}")
    return path, summary_path


def _verify_recomputable(path: str, aggregates, thresholds) -> None:
    again = aggregate_rows(read_report(path).rows, thresholds)
    for k, agg in aggregates.items():
        for key, value in agg.items():
            other = again[k][key]
            if math.isnan(value) and math.isnan(other):
                continue
            if abs(value - other) > 1e-9:
                raise FormatError(f"aggregate {key} of class {k} not recomputable from rows ({value} vs {other})")


def read_report(path: str) -> MetricsReport:
    """读取逐样本报告文件"""
    try:
        frame = pd.read_csv(path, dtype={"id": str}, na_values=[UNDEFINED], keep_default_na=False,
                            float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable report ({exc})") from exc
    missing = set(ROW_FIELDS) - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing report columns {sorted(missing)}")
    rows = [
        MetricRow(
            sample_id=rec["id"],
            class_index=int(rec["class"]),
            dice=float(rec["dice"]),
            hd_mm=_optional(rec["hd_mm"]),
            rvd=_optional(rec["rvd"]),
            signed_vd=_optional(rec["signed_vd"]),
            holes=int(rec["holes"]),
            components=int(rec["components"]),
            violations=int(rec["violations"]),
        )
        for rec in frame.to_dict("records")
    ]
    return MetricsReport(rows)
