"""A small reverse-mode automatic-differentiation engine on numpy arrays."""
from .functional import (
    RunningStats,
    add,
    batch_norm,
    concat,
    conv1d,
    dropout,
    masked_scale,
    mse_loss,
    mul,
    relu,
    same_padding,
    scale,
    space_to_channel,
    subpixel_shuffle,
)
from .functional import sum as tensor_sum
from .optim import Parameter, adam_step
from .tensor import AutogradError, Tape, Tensor, active_tape, backward

__all__ = [
    "AutogradError",
    "Parameter",
    "RunningStats",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "add",
    "backward",
    "batch_norm",
    "concat",
    "conv1d",
    "dropout",
    "masked_scale",
    "mse_loss",
    "mul",
    "relu",
    "same_padding",
    "scale",
    "space_to_channel",
    "subpixel_shuffle",
    "tensor_sum",
]
