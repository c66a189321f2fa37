"""
Training package for lfbnet.
Provides the three-step alternating trainer, feedback-loop inference,
z-score normalization and checkpoint files.
"""

from .normalization import NormStats, compute_stats, denormalize, normalize
from .checkpoint import (
    CheckpointBundle,
    bundle_from_systems,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    systems_from_bundle,
)
from .inference import InferenceResult, TimingReport, infer, predict, time_inference
from .trainer import HistoryRow, Trainer, TrainConfig, TrainingData, TrainState, read_history, write_history

__all__ = [
    "NormStats",
    "compute_stats",
    "denormalize",
    "normalize",
    "CheckpointBundle",
    "bundle_from_systems",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "systems_from_bundle",
    "InferenceResult",
    "infer",
    "predict",
    "TimingReport",
    "time_inference",
    "HistoryRow",
    "Trainer",
    "TrainConfig",
    "TrainingData",
    "TrainState",
    "read_history",
    "write_history",
]
