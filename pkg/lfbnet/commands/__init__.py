"""
Command package for lfbnet.
One module per subcommand, each exposing add_arguments(parser) and run(args) -> int,
plus the experiment document shared by train / ablate.
"""

from . import ablate, bench, compare, evaluate, gen_data, plot, train
from .experiment import VARIANTS, ExperimentConfig, experiment_from_dict, load_experiment

# 子命令名 → 模块
COMMANDS = {
    "gen-data": gen_data,
    "train": train,
    "eval": evaluate,
    "ablate": ablate,
    "compare": compare,
    "plot": plot,
    "bench": bench,
}

__all__ = [
    "COMMANDS",
    "VARIANTS",
    "ExperimentConfig",
    "experiment_from_dict",
    "load_experiment",
]
