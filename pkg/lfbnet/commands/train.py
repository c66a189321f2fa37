"""
train.py - train 子命令

    python -m lfbnet train --config experiment.yaml [--variant lfb] [--seed 0] [--out runs/lfb]

按变体执行训练协议（fs / fs_star 只做步骤1，lfb / lfb_train_only 做三步循环），
输出:
    <out>/best.lfbc     验证损失最低时的检查点
    <out>/history.csv   每个训练步骤一行: cycle, step, train_loss, val_loss（只有周期最后一步有验证损失）
"""

import argparse
import logging
import os
from dataclasses import dataclass
from typing import Optional

from .experiment import ExperimentConfig, ExperimentData, load_experiment, load_experiment_data, raw_images, \
    resolve_model, training_data
from ..model import build_systems, parameter_budget
from ..training import CheckpointBundle, Trainer, TrainState, compute_stats, save_checkpoint, write_history

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.lfbc"
HISTORY_NAME = "history.csv"


@dataclass
class TrainOutcome:
    state: TrainState
    bundle: CheckpointBundle
    checkpoint_path: str
    history_path: str


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment document (YAML)")
    parser.add_argument("--variant", help="override the variant (fs, fs_star, lfb, lfb_train_only)")
    parser.add_argument("--seed", type=int, help="override the training seed")
    parser.add_argument("--out", help="output directory (default: output_dir of the experiment)")


def train_experiment(exp: ExperimentConfig, out_dir: str, data: Optional[ExperimentData] = None) -> TrainOutcome:
    """训练一个变体并写出检查点和损失历史"""
    data = data or load_experiment_data(exp)
    model_cfg = resolve_model(exp, data.splits["train"])
    norm = compute_stats(raw_images(data.splits["train"]))
    train = training_data(data.splits["train"], norm)
    val = training_data(data.splits["val"], norm)

    S, F = build_systems(model_cfg, seed=exp.train.seed)
    trainer = Trainer(S, F if exp.feedback else None, exp.train, norm, variant=exp.variant)
    state, bundle = trainer.train_loop(train, val, feedback=exp.feedback)

    checkpoint_path = os.path.join(out_dir, CHECKPOINT_NAME)
    history_path = os.path.join(out_dir, HISTORY_NAME)
    save_checkpoint(bundle, checkpoint_path)
    write_history(state.history, history_path)
    return TrainOutcome(state, bundle, checkpoint_path, history_path)


def run(args: argparse.Namespace) -> int:
    exp = load_experiment(args.config)
    if args.variant or args.seed is not None:
        exp = exp.with_variant(args.variant or exp.variant, seed=args.seed)
    out_dir = args.out or exp.output_dir

    data = load_experiment_data(exp)
    budget = parameter_budget(resolve_model(exp, data.splits["train"]))
    logger.info(f"🧱 parameters: train {budget['train']:,}, test {budget['test']:,} "
                f"(F_d {budget['feedback_decoder']:,}), reference U-Net {budget['reference_unet']:,}")

    outcome = train_experiment(exp, out_dir, data)
    logger.info(f"✅ {exp.variant}: best val loss {outcome.state.best_val_loss:.5f} "
                f"at cycle {outcome.state.best_cycle}")
    print(f"checkpoint {outcome.checkpoint_path}")
    print(f"history {outcome.history_path}")
    return 0
