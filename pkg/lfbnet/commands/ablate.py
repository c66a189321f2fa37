"""
ablate.py - ablate 子命令

    python -m lfbnet ablate --config experiment.yaml --variants fs,fs_star,lfb --seeds 0,1,2
    python -m lfbnet ablate --config experiment.yaml --variants lfb --merges concat,add,multiply --seeds 0

功能说明:
    对每个种子、每个变体（以及每种合并策略）训练并在测试集上评估，输出:
    - <out>/<run>/seed<s>/best.lfbc, history.csv, eval_test.csv
    - <out>/ablation.csv          并排对比表（每个运行一行 + 每个变体的跨种子均值）
    - <out>/ablation_pvalues.csv  每对变体、每个指标（Dice / HD）的Wilcoxon检验

    所有变体使用同一份数据划分和同一个打乱顺序（由种子决定）。
    同一个变体列出两次时复用第一次的结果（训练是确定性的）。
"""

import argparse
import itertools
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .evaluate import evaluate_samples, model_predictor
from .experiment import check_variant, load_experiment, load_experiment_data, parse_list
from .train import train_experiment
from ..evaluation import MetricsReport, compare_paired, write_report
from ..model import MERGE_STRATEGIES
from ..training import systems_from_bundle
from ..utils.errors import DataError, UsageError

logger = logging.getLogger(__name__)

TABLE_FIELDS = ["run", "variant", "merge", "seed", "dice_mean", "hd_mean", "violations", "best_val_loss", "cycles"]
PVALUE_FIELDS = ["run_a", "run_b", "metric", "n", "statistic", "p_value", "method", "mean_difference", "significant"]


@dataclass
class RunResult:
    label: str
    variant: str
    merge: str
    seed: int
    report: MetricsReport
    best_val_loss: float
    cycles: int


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment document (YAML)")
    parser.add_argument("--variants", default="fs,fs_star,lfb", help="comma-separated variants")
    parser.add_argument("--seeds", default="0", help="comma-separated training seeds")
    parser.add_argument("--merges", help="comma-separated merge strategies for the feedback variants")
    parser.add_argument("--out", help="output directory (default: output_dir of the experiment)")


def _run_labels(variants: List[str], merges: Optional[List[str]]) -> List[Tuple[str, str, Optional[str]]]:
    """(运行名, 变体, 合并策略)；重复的变体加 #2、#3 后缀"""
    runs = []
    seen: Dict[str, int] = {}
    for variant in variants:
        options = merges if (merges and variant in ("lfb", "lfb_train_only")) else [None]
        for merge in options:
            base = variant if merge is None else f"{variant}[{merge}]"
            seen[base] = seen.get(base, 0) + 1
            label = base if seen[base] == 1 else f"{base}#{seen[base]}"
            runs.append((label, variant, merge))
    return runs


def _paired(a: MetricsReport, b: MetricsReport, metric: str):
    """按 (样本, 类别) 配对；任一侧无定义的对被丢弃"""
    va = {(r.sample_id, r.class_index): getattr(r, metric) for r in a.rows}
    vb = {(r.sample_id, r.class_index): getattr(r, metric) for r in b.rows}
    keys = [k for k in va if k in vb and va[k] is not None and vb[k] is not None]
    return [va[k] for k in keys], [vb[k] for k in keys]


def compare_runs(results: List[RunResult]) -> List[Dict[str, object]]:
    """每对运行名，把所有种子的逐样本指标合并后做成对检验"""
    labels = list(dict.fromkeys(r.label for r in results))
    rows = []
    for la, lb in itertools.combinations(labels, 2):
        for metric in ("dice", "hd_mm"):
            xs, ys = [], []
            for ra in (r for r in results if r.label == la):
                rb = next((r for r in results if r.label == lb and r.seed == ra.seed), None)
                if rb is None:
                    continue
                a, b = _paired(ra.report, rb.report, metric)
                xs += a
                ys += b
            result = compare_paired(xs, ys)
            if result.insufficient:
                logger.warning(f"⚠️ {la} vs {lb} ({metric}): insufficient data for the Wilcoxon test")
            rows.append({
                "run_a": la, "run_b": lb, "metric": metric, "n": result.n,
                "statistic": result.statistic, "p_value": result.p_value,
                "method": result.method, "mean_difference": result.mean_difference,
                "significant": int(result.significant()),
            })
    return rows


def _table_rows(results: List[RunResult]) -> List[Dict[str, object]]:
    rows = []
    for r in results:
        rows.append({
            "run": r.label, "variant": r.variant, "merge": r.merge, "seed": r.seed,
            "dice_mean": r.report.foreground_mean("dice"), "hd_mean": r.report.foreground_mean("hd"),
            "violations": r.report.violations(), "best_val_loss": r.best_val_loss, "cycles": r.cycles,
        })
    for label in dict.fromkeys(r.label for r in results):
        group = [r for r in results if r.label == label]
        rows.append({
            "run": label, "variant": group[0].variant, "merge": group[0].merge, "seed": "mean",
            "dice_mean": float(np.nanmean([r.report.foreground_mean("dice") for r in group])),
            "hd_mean": float(np.nanmean([r.report.foreground_mean("hd") for r in group])),
            "violations": float(np.mean([r.report.violations() for r in group])),
            "best_val_loss": float(np.mean([r.best_val_loss for r in group])),
            "cycles": float(np.mean([r.cycles for r in group])),
        })
    return rows


def _write_csv(path: str, fields: List[str], rows: List[Dict[str, object]]) -> None:
    pd.DataFrame(rows, columns=fields).to_csv(path, index=False)


def run(args: argparse.Namespace) -> int:
    variants = parse_list(args.variants)
    for v in variants:
        check_variant(v)
    merges = parse_list(args.merges) if args.merges else None
    for m in merges or []:
        if m not in MERGE_STRATEGIES:
            raise UsageError(f"unknown merge strategy {m!r}, expected one of {MERGE_STRATEGIES}")
    seeds = parse_list(args.seeds, int)
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    runs = _run_labels(variants, merges)
    if len(runs) < 2:
        raise UsageError("ablation needs at least two runs (variants × merge strategies)")

    base = load_experiment(args.config)
    out_dir = args.out or base.output_dir
    data = load_experiment_data(base)
    test = data.splits.get("test")
    if not test:
        raise DataError("the dataset has no 'test' split to compare the variants on")

    logger.info("=" * 60)
    logger.info(f"🚀 ablation: {[r[0] for r in runs]} × seeds {seeds}")
    logger.info("=" * 60)

    results: List[RunResult] = []
    cache: Dict[Tuple[str, Optional[str], int], RunResult] = {}
    for seed in seeds:
        for label, variant, merge in runs:
            key = (variant, merge, seed)
            if key in cache:
                first = cache[key]
                results.append(RunResult(label, variant, first.merge, seed, first.report,
                                         first.best_val_loss, first.cycles))
                continue
            exp = base.with_variant(variant, merge=merge, seed=seed)
            run_dir = os.path.join(out_dir, label, f"seed{seed}")
            outcome = train_experiment(exp, run_dir, data)
            S, F = systems_from_bundle(outcome.bundle)
            report = evaluate_samples(test, outcome.bundle, model_predictor(S, F, exp.eval_iterations),
                                      data.spacing_mm)
            write_report(report, os.path.join(run_dir, "eval_test.csv"))
            result = RunResult(label, variant, exp.model.merge, seed, report,
                               outcome.state.best_val_loss, outcome.state.cycle)
            cache[key] = result
            results.append(result)
            logger.info(f"✅ {label} seed {seed}: dice {report.foreground_mean('dice'):.4f}, "
                        f"hd {report.foreground_mean('hd'):.3f}, violations {report.violations()}")

    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "ablation.csv")
    pvalue_path = os.path.join(out_dir, "ablation_pvalues.csv")
    _write_csv(table_path, TABLE_FIELDS, _table_rows(results))
    pvalues = compare_runs(results)
    _write_csv(pvalue_path, PVALUE_FIELDS, pvalues)

    for row in pvalues:
        flag = " *" if row["significant"] else ""
        p_text = "n/a" if row["p_value"] is None else f"{row['p_value']:.6g}"
        logger.info(f"📊 {row['run_a']} vs {row['run_b']} {row['metric']}: p={p_text} ({row['method']}){flag}")
    print(f"table {table_path}")
    print(f"pvalues {pvalue_path}")
    return 0
