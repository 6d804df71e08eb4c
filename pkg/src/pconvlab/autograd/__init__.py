from .tensor import (
    NonFiniteError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    as_tensor,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)
from . import ops
from .ops import ConvSpec, PadSpec, concat_channels, conv2d

__all__ = [
    "NonFiniteError", "Tape", "TapeError", "Tensor", "active_tape", "as_tensor", "get_default_dtype",
    "no_grad", "precision", "set_default_dtype", "ops", "ConvSpec", "PadSpec", "concat_channels", "conv2d",
]
