"""Pinwheel-shaped convolution and scale-based dynamic losses for small-target detection, in numpy."""
from .autograd import Tape, Tensor, ops
from .pconv import PConv, PConvSpec, count_params, receptive_field, swap_first_layers

__version__ = "0.1.0"
__all__ = ["Tape", "Tensor", "ops", "PConv", "PConvSpec", "count_params", "receptive_field", "swap_first_layers"]
