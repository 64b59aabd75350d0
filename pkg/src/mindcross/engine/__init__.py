from . import functional
from .gradcheck import finite_difference_check
from .tensor import Tape, TapeEntry, Tensor, backward, current_tape, no_grad, zero_grad

__all__ = [
    "Tape",
    "TapeEntry",
    "Tensor",
    "backward",
    "current_tape",
    "finite_difference_check",
    "functional",
    "no_grad",
    "zero_grad",
]
