"""
evaluate.py - eval 子命令

    python -m lfbnet eval --checkpoint runs/lfb/best.lfbc --data data/cardiac --split test --iterations 1

对一个划分逐样本推理，计算每个前景类别的 Dice / HD / RVD / 合理性指标，
写出逐样本报告和汇总报告。

可选:
    --thresholds dice=0.88,hd=6.5   最差情况分析列
    --volume-size k                 把连续 k 个切片堆成伪体数据，在3D中计算指标
"""

import argparse
import logging
import os
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..data import Sample, load_dataset, stack
from ..evaluation import MetricsReport, Thresholds, evaluate_label_maps, write_report
from ..model import FeedbackSystem, ForwardSystem
from ..training import CheckpointBundle, load_checkpoint, normalize, predict, systems_from_bundle
from ..utils import config
from ..utils.errors import ShapeError, UsageError

logger = logging.getLogger(__name__)

# 预测函数: 归一化后的 (n,1,H,W) 图像 → (n,H,W) 标签
Predictor = Callable[[np.ndarray], np.ndarray]


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="checkpoint file (.lfbc)")
    parser.add_argument("--data", required=True, help="dataset manifest or directory")
    parser.add_argument("--split", default="test", help="split to evaluate (default test)")
    parser.add_argument("--iterations", type=int, help="feedback iterations (default: from the checkpoint variant)")
    parser.add_argument("--out", help="report path (default: next to the checkpoint)")
    parser.add_argument("--thresholds", nargs="?", const="", default=None,
                        help=f"add worst-case columns; optional dice=<f>,hd=<f> "
                             f"(default dice={config.DICE_THRESHOLD},hd={config.HD_THRESHOLD_MM})")
    parser.add_argument("--volume-size", type=int, default=0, help="stack k consecutive slices into volumes")
    parser.add_argument("--slice-spacing", type=float, help="slice spacing in mm for volumes (default: pixel spacing)")


def default_iterations(bundle: CheckpointBundle) -> int:
    if bundle.variant != "lfb" or not bundle.has_feedback:
        return 0
    return int(bundle.train_config.get("test_feedback_iterations", config.TEST_FEEDBACK_ITERATIONS))


def model_predictor(S: ForwardSystem, F: Optional[FeedbackSystem], iterations: int) -> Predictor:
    def run(x: np.ndarray) -> np.ndarray:
        return predict(S, F, x, iterations).labels
    return run


def _volumes(ids: List[str], labels: np.ndarray, size: int):
    usable = (len(ids) // size) * size
    if usable < len(ids):
        logger.warning(f"⚠️ {len(ids) - usable} trailing slices do not fill a volume of {size} and are skipped")
    if usable == 0:
        raise UsageError(f"--volume-size {size} exceeds the {len(ids)} available slices")
    vol_ids = [f"vol{i // size:04d}" for i in range(0, usable, size)]
    return vol_ids, [labels[i:i + size] for i in range(0, usable, size)]


def evaluate_samples(samples: Sequence[Sample], bundle: CheckpointBundle, predictor: Predictor,
                     spacing_mm: float = 1.0, thresholds: Optional[Thresholds] = None,
                     volume_size: int = 0, slice_spacing: Optional[float] = None) -> MetricsReport:
    """
    对样本推理并计算指标

    异常:
        ShapeError: 图像尺寸与检查点的模型输入尺寸不一致
    """
    x, y, ids = stack(samples)
    model_size = tuple(bundle.model_config.input_size)
    if tuple(x.shape[2:]) != model_size:
        raise ShapeError(f"data images are {tuple(x.shape[2:])} but the checkpoint expects {model_size}")
    predictions = predictor(normalize(x, bundle.norm))
    n_label_classes = bundle.model_config.label_classes

    if volume_size and volume_size > 1:
        vol_ids, pred_vols = _volumes(ids, predictions, volume_size)
        _, ref_vols = _volumes(ids, y, volume_size)
        spacing = (slice_spacing or spacing_mm, spacing_mm, spacing_mm)
        return evaluate_label_maps(vol_ids, pred_vols, ref_vols, n_label_classes, spacing, thresholds)
    return evaluate_label_maps(ids, list(predictions), list(y), n_label_classes, (spacing_mm, spacing_mm), thresholds)


def parse_thresholds(text: Optional[str]) -> Optional[Thresholds]:
    if text is None:
        return None
    try:
        return Thresholds.parse(text)
    except ValueError as e:
        raise UsageError(str(e)) from e


def run(args: argparse.Namespace) -> int:
    if args.iterations is not None and args.iterations < 0:
        raise UsageError(f"--iterations must be >= 0, got {args.iterations}")
    if args.volume_size < 0:
        raise UsageError(f"--volume-size must be >= 0, got {args.volume_size}")
    thresholds = parse_thresholds(args.thresholds)

    bundle = load_checkpoint(args.checkpoint)
    S, F = systems_from_bundle(bundle)
    iterations = default_iterations(bundle) if args.iterations is None else args.iterations
    manifest = load_dataset(args.data)
    samples = manifest.samples(args.split)

    logger.info(f"🚀 evaluating {bundle.variant} on {len(samples)} {args.split} samples, {iterations} iteration(s)")
    report = evaluate_samples(samples, bundle, model_predictor(S, F, iterations), manifest.spacing_mm,
                              thresholds, args.volume_size, args.slice_spacing)

    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                   f"eval_{args.split}_it{iterations}.csv")
    path, summary_path = write_report(report, out)
    for k, agg in report.aggregates().items():
        logger.info(f"📊 class {k}: dice {agg['dice_mean']:.4f} ± {agg['dice_std']:.4f}, "
                    f"hd {agg['hd_mean']:.3f} ± {agg['hd_std']:.3f} mm, rvd {agg['rvd_mean']:.4f}")
    print(f"report {path}")
    print(f"summary {summary_path}")
    return 0

