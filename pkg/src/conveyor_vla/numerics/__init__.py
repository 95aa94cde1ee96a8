"""Dense tensor kernels with reverse-mode differentiation."""

from conveyor_vla.numerics import ops
from conveyor_vla.numerics.gradcheck import check_gradients, finite_diff_check
from conveyor_vla.numerics.ops import masked_softmax, rms_norm
from conveyor_vla.numerics.optim import AdamW, clip_by_global_norm, global_norm
from conveyor_vla.numerics.tensor import (
    GradTape,
    Parameter,
    Tensor,
    active_tape,
    backward,
    stop_gradient,
)

__all__ = [
    "AdamW",
    "GradTape",
    "Parameter",
    "Tensor",
    "active_tape",
    "backward",
    "check_gradients",
    "clip_by_global_norm",
    "finite_diff_check",
    "global_norm",
    "masked_softmax",
    "ops",
    "rms_norm",
    "stop_gradient",
]
