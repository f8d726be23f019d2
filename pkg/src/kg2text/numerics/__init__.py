from . import ops
from .gradcheck import EvaluationError, grad_check, relative_error
from .nn import (
    FeedForward,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    ffn,
    glorot,
    gru_cell,
    layer_norm,
    linear,
    new_bias,
    new_weight,
    sinusoidal_position,
    sinusoidal_table,
    softmax,
)
from .optim import adam_step, clip_grad_norm, noam_lr
from .tensor import EmptySupportError, Parameter, ShapeError, Tape, Tensor, as_tensor, no_record

__all__ = [
    "EmptySupportError",
    "EvaluationError",
    "FeedForward",
    "GRUCell",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "clip_grad_norm",
    "ffn",
    "glorot",
    "grad_check",
    "gru_cell",
    "layer_norm",
    "linear",
    "new_bias",
    "new_weight",
    "no_record",
    "noam_lr",
    "ops",
    "relative_error",
    "sinusoidal_position",
    "sinusoidal_table",
    "softmax",
]
