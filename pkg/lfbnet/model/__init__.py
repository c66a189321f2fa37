"""
Model package for lfbnet.
Provides the forward system S, the feedback system F, the merge block and
parameter-group freezing.
"""

from .layers import ConvBlock, ConvBlockSpec, Module
from .systems import (
    GROUPS,
    MERGE_STRATEGIES,
    EncoderOutput,
    FeedbackSystem,
    ForwardSystem,
    ModelConfig,
    build_systems,
    evaluating,
    feedback_encode,
    feedback_full,
    forward_pass,
    group_of,
    merge,
    null_feedback,
    parameter_budget,
    parameter_count,
    reference_unet_parameter_count,
    set_frozen,
)

__all__ = [
    "ConvBlock",
    "ConvBlockSpec",
    "Module",
    "GROUPS",
    "MERGE_STRATEGIES",
    "EncoderOutput",
    "FeedbackSystem",
    "ForwardSystem",
    "ModelConfig",
    "build_systems",
    "evaluating",
    "feedback_encode",
    "feedback_full",
    "forward_pass",
    "group_of",
    "merge",
    "null_feedback",
    "parameter_budget",
    "parameter_count",
    "reference_unet_parameter_count",
    "set_frozen",
]
