"""Dense float64 tensors with reverse-mode differentiation, dropout and Adam."""

from . import ops
from .gradcheck import NondeterministicLossError, grad_check
from .ops import dropout, masked_log_softmax, masked_softmax
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import Node, NonFiniteError, ShapeError, backward, constant, parameter

__all__ = [
    "AdamState",
    "Node",
    "NondeterministicLossError",
    "NonFiniteError",
    "Rng",
    "ShapeError",
    "adam_step",
    "backward",
    "constant",
    "dropout",
    "grad_check",
    "masked_log_softmax",
    "masked_softmax",
    "ops",
    "parameter",
]
