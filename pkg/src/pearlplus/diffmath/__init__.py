from . import tensor as ops
from .nn import Mlp, forward_mlp
from .optim import Adam, AdamState, adam_step, soft_update
from .tensor import (
    DiffMathError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    parameter,
    tensor,
)

__all__ = [
    "Adam",
    "AdamState",
    "DiffMathError",
    "Mlp",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "forward_mlp",
    "ops",
    "parameter",
    "soft_update",
    "tensor",
]
