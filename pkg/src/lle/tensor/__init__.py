"""Minimal float32 tensor library with tape-based reverse-mode autodiff."""
from . import ops
from .core import (
    DTYPE,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    backward,
    dump,
    parse_dump,
    zero_grad,
)
from .instrument import OpCounter, tick
from .rng import Rng

__all__ = [
    "DTYPE",
    "NonFiniteError",
    "OpCounter",
    "Rng",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "dump",
    "ops",
    "parse_dump",
    "tick",
    "zero_grad",
]
