"""Minimal dense tensor with reverse-mode automatic differentiation."""

from deskmatch.autodiff import ops
from deskmatch.autodiff._tape import (
    ComputationTape,
    Tensor,
    backward,
    current_tape,
    fresh_tape,
    gradients,
    is_recording,
    no_grad,
)
from deskmatch.autodiff.gradcheck import check_gradients
from deskmatch.autodiff.ops import stop_gradient

__all__ = [
    "ComputationTape",
    "Tensor",
    "backward",
    "check_gradients",
    "current_tape",
    "fresh_tape",
    "gradients",
    "is_recording",
    "no_grad",
    "ops",
    "stop_gradient",
]
