"""
Evaluation package for lfbnet.
Provides the training losses, segmentation metrics, the Wilcoxon signed-rank
test and the per-sample / aggregate metric reports.
"""

from .losses import ClassWeights, cross_entropy_loss, dice_loss, one_hot, segmentation_loss, total_loss
from .metrics import (
    BinaryMask,
    PlausibilityReport,
    dice_coefficient,
    hausdorff_distance,
    labels_from_probs,
    plausibility_check,
    relative_volume_difference,
    signed_volume_difference,
)
from .stats import WilcoxonResult, compare_paired, wilcoxon_signed_rank
from .reports import MetricRow, MetricsReport, Thresholds, evaluate_label_maps, read_report, write_report

__all__ = [
    "ClassWeights",
    "cross_entropy_loss",
    "dice_loss",
    "one_hot",
    "segmentation_loss",
    "total_loss",
    "BinaryMask",
    "PlausibilityReport",
    "dice_coefficient",
    "hausdorff_distance",
    "labels_from_probs",
    "plausibility_check",
    "relative_volume_difference",
    "signed_volume_difference",
    "WilcoxonResult",
    "compare_paired",
    "wilcoxon_signed_rank",
    "MetricRow",
    "MetricsReport",
    "Thresholds",
    "evaluate_label_maps",
    "read_report",
    "write_report",
]
