"""
Tensor package for lfbnet.
Provides 64-bit tensors, reverse-mode differentiation on a tape, the
differentiable network operations and the Adam optimizer.
"""

from .core import Tensor, Parameter, Tape, active_tape, no_grad, zero_grad
from .optim import AdamState, adam_step
from . import ops

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "active_tape",
    "no_grad",
    "zero_grad",
    "AdamState",
    "adam_step",
    "ops",
]
