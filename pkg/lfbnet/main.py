"""
main.py - lfbnet 命令行主入口

功能说明:
    解析子命令并交给分发器执行:
    1. gen-data - 生成体模数据集并划分
    2. train    - 按变体训练（fs / fs_star / lfb / lfb_train_only）
    3. eval     - 推理并写出逐样本和汇总指标报告
    4. ablate   - 多变体、多种子消融，附Wilcoxon检验
    5. compare  - 两个报告之间的成对检验
    6. plot     - 损失曲线
    7. bench    - 单图推理耗时

使用方法:
    python -m lfbnet gen-data --out data/cardiac --n 100
    python -m lfbnet train --config experiment.yaml --variant lfb
    python -m lfbnet eval --checkpoint runs/lfb/best.lfbc --data data/cardiac --debug
"""

import argparse
import logging
import sys
from typing import List, Optional

from .commands import COMMANDS
from .dispatcher import EXIT_USAGE, get_dispatcher
from .utils import config

# ============================================================
# 日志配置
# ============================================================
logging.basicConfig(
    level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

HELP = {
    "gen-data": "generate a phantom dataset with train/val/test splits",
    "train": "train one variant and write the best checkpoint",
    "eval": "evaluate a checkpoint on a dataset split",
    "ablate": "train and compare several variants over seeds",
    "compare": "paired Wilcoxon test between two reports",
    "plot": "plot loss histories",
    "bench": "time single-image feedback inference",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfbnet",
        description="Latent-space feedback segmentation: train, evaluate and ablate on phantom data",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python -m lfbnet gen-data --out data/cardiac --n 100
  python -m lfbnet train --config experiment.yaml
  python -m lfbnet ablate --config experiment.yaml --variants fs,fs_star,lfb --seeds 0,1,2
        """,
    )
    parser.add_argument("--debug", action="store_true", default=config.DEBUG, help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, module in COMMANDS.items():
        module.add_arguments(sub.add_parser(name, help=HELP[name]))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point. Returns the process exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 对 --help 以0退出，对用法错误以2退出
        return EXIT_USAGE if e.code not in (0, None) else 0

    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Debug mode enabled")

    logger.info("=" * 60)
    logger.info(f"🚀 lfbnet {args.command}")
    logger.info("=" * 60)
    code = get_dispatcher().dispatch(args)
    if code == 0:
        logger.info(f"✅ {args.command} finished")
    return code


if __name__ == "__main__":
    sys.exit(main())
