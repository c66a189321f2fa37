"""
plot.py - plot 子命令

    python -m lfbnet plot --history runs/lfb/history.csv --label lfb \
                          --history runs/fs/history.csv --label fs --out curves.png

把一个或多个损失历史画成"损失-周期"曲线:
    实线 = 每个周期结束时的验证损失
    虚线 = 步骤1的训练损失
"""

import argparse
import logging
import os
from typing import Dict, List, Sequence, Tuple

import matplotlib as mpl

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..training import HistoryRow, read_history
from ..utils.errors import UsageError

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--history", action="append", default=[], help="loss history CSV (repeatable)")
    parser.add_argument("--label", action="append", default=[], help="legend label per --history")
    parser.add_argument("--out", required=True, help="output image (.png)")
    parser.add_argument("--title", default="loss per cycle")


def curves(rows: Sequence[HistoryRow]) -> Dict[str, Tuple[List[int], List[float]]]:
    """{"val": (周期, 周期末验证损失), "train": (周期, 步骤1训练损失)}"""
    last: Dict[int, HistoryRow] = {}
    step1: Dict[int, float] = {}
    for r in rows:
        last[r.cycle] = r
        if r.step == 1:
            step1[r.cycle] = r.train_loss
    cycles = sorted(last)
    return {
        "val": (cycles, [last[c].val_loss for c in cycles]),
        "train": (sorted(step1), [step1[c] for c in sorted(step1)]),
    }


def plot_histories(histories: Sequence[Sequence[HistoryRow]], labels: Sequence[str], out: str,
                   title: str = "loss per cycle") -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for rows, label in zip(histories, labels):
            c = curves(rows)
            (line,) = ax.plot(*c["val"], label=f"{label} val")
            ax.plot(*c["train"], linestyle="--", color=line.get_color(), alpha=0.7, label=f"{label} train")
        ax.set_xlabel("cycle")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        fig.savefig(out, dpi=150, bbox_inches="tight")
    finally:
        plt.close(fig)
    return out


def run(args: argparse.Namespace) -> int:
    if not args.history:
        raise UsageError("plot needs at least one --history file")
    if args.label and len(args.label) != len(args.history):
        raise UsageError(f"got {len(args.label)} --label for {len(args.history)} --history")
    labels = args.label or [os.path.basename(os.path.dirname(os.path.abspath(p))) or p for p in args.history]
    histories = []
    for path in args.history:
        if not os.path.exists(path):
            raise UsageError(f"history not found: {path}")
        histories.append(read_history(path))
    out = plot_histories(histories, labels, args.out, args.title)
    logger.info(f"✅ loss curves written: {out}")
    print(f"plot {out}")
    return 0
