"""
bench.py - bench 子命令

    python -m lfbnet bench --size 256 --iterations 1
    python -m lfbnet bench --checkpoint runs/lfb/best.lfbc

测量单张图像反馈环推理的耗时（单线程，预热一次后取多次中的最短时间），
并与耗时上限（LFB_INFER_BOUND，默认 0.25 秒）以及参考耗时 0.025 秒对照。
超出上限只记录警告，退出码仍为0。
"""

import argparse
import logging

from ..model import ModelConfig, build_systems
from ..training import load_checkpoint, systems_from_bundle, time_inference
from ..utils.errors import UsageError

logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", help="time this checkpoint (default: freshly built default model)")
    parser.add_argument("--size", type=int, default=256, help="square input size without a checkpoint (default 256)")
    parser.add_argument("--iterations", type=int, default=1, help="feedback iterations (default 1)")
    parser.add_argument("--repeats", type=int, default=3, help="timed repetitions after one warm-up (default 3)")


def run(args: argparse.Namespace) -> int:
    if args.iterations < 0:
        raise UsageError(f"--iterations must be >= 0, got {args.iterations}")
    if args.repeats < 1:
        raise UsageError(f"--repeats must be >= 1, got {args.repeats}")

    if args.checkpoint:
        S, F = systems_from_bundle(load_checkpoint(args.checkpoint))
    else:
        S, F = build_systems(ModelConfig(input_size=(args.size, args.size)), seed=0)
    if args.iterations > 0 and F is None:
        raise UsageError("the checkpoint has no feedback system; use --iterations 0")

    report = time_inference(S, F, args.iterations, args.repeats)
    print(report.line())
    return 0
