"""
compare.py - compare 子命令

    python -m lfbnet compare --report runs/lfb/eval_test_it1.csv --report runs/fs/eval_test_it0.csv

读取两个逐样本报告，按类别、按指标（dice / hd_mm / rvd）做Wilcoxon成对检验。
两个报告必须覆盖完全相同的 (样本, 类别) 集合。
"""

import argparse
import logging
import os
from typing import Dict, List

import pandas as pd

from ..evaluation import MetricsReport, compare_paired, read_report
from ..utils import config
from ..utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

METRICS = ("dice", "hd_mm", "rvd")
FIELDS = ["class", "metric", "n", "statistic", "p_value", "method", "mean_difference", "significant"]


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--report", action="append", default=[], help="per-sample report (give exactly two)")
    parser.add_argument("--out", help="write the comparison table to this CSV")


def compare_reports(a: MetricsReport, b: MetricsReport) -> List[Dict[str, object]]:
    """
    逐类别、逐指标的成对检验

    异常:
        DataError: 两个报告的 (样本, 类别) 集合不一致
    """
    keys_a = {(r.sample_id, r.class_index) for r in a.rows}
    keys_b = {(r.sample_id, r.class_index) for r in b.rows}
    if keys_a != keys_b:
        only = sorted(keys_a ^ keys_b)[:5]
        raise DataError(f"reports cover different samples/classes, e.g. {only}")

    rows = []
    for k in a.classes():
        for metric in METRICS:
            va, vb = a.values(metric, k), b.values(metric, k)
            ids = [i for i in sorted(va) if va[i] is not None and vb[i] is not None]
            dropped = len(va) - len(ids)
            if dropped:
                logger.info(f"class {k} {metric}: {dropped} pair(s) with an undefined value dropped")
            result = compare_paired([va[i] for i in ids], [vb[i] for i in ids])
            if result.insufficient:
                logger.warning(f"⚠️ class {k} {metric}: insufficient nonzero differences for the test")
            rows.append({
                "class": k, "metric": metric, "n": result.n,
                "statistic": result.statistic, "p_value": result.p_value,
                "method": result.method, "mean_difference": result.mean_difference,
                "significant": int(result.significant(config.SIGNIFICANCE_LEVEL)),
            })
    return rows


def _fmt_p(p_value) -> str:
    return "n/a" if p_value is None else f"{p_value:.6g}"


def run(args: argparse.Namespace) -> int:
    if len(args.report) != 2:
        raise UsageError(f"compare needs exactly two --report files, got {len(args.report)}")
    for path in args.report:
        if not os.path.exists(path):
            raise UsageError(f"report not found: {path}")
    rows = compare_reports(read_report(args.report[0]), read_report(args.report[1]))

    for row in rows:
        flag = " *" if row["significant"] else ""
        print(f"class {row['class']} {row['metric']:<6} n={row['n']:<4} p={_fmt_p(row['p_value'])} "
              f"({row['method']}) mean_diff={row['mean_difference']:.6g}{flag}")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        pd.DataFrame(rows, columns=FIELDS).to_csv(args.out, index=False)
        logger.info(f"💾 comparison written: {args.out}")
    return 0
