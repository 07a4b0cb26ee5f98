"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from deskmatch.autodiff._tape import Array, Tensor, fresh_tape, gradients

EPSILON = 1e-5
# Gradients smaller than this are compared absolutely.
GRADIENT_FLOOR = 1e-3


def numerical_gradients(
    fn: Callable[..., Tensor], arrays: Sequence[Array], eps: float = EPSILON
) -> list[Array]:
    """Estimate d fn / d array for each input by central differences."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    out: list[Array] = []
    for k, arr in enumerate(base):
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            plus = fn(*(Tensor(a) for a in base)).item()
            arr[idx] = orig - eps
            minus = fn(*(Tensor(a) for a in base)).item()
            arr[idx] = orig
            grad[idx] = (plus - minus) / (2.0 * eps)
        out.append(grad)
    return out


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[Array]) -> list[Array]:
    """Reverse-mode gradients of ``fn`` at ``arrays`` on an isolated tape."""
    with fresh_tape():
        inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        return gradients(fn(*inputs), inputs)


def max_relative_error(a: Array, b: Array, floor: float = 1e-8) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` over all entries."""
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def check_gradients(
    fn: Callable[..., Tensor], arrays: Sequence[Array], eps: float = EPSILON
) -> float:
    """Return the worst relative error between analytic and numerical gradients."""
    analytic = analytic_gradients(fn, arrays)
    with fresh_tape():
        numeric = numerical_gradients(fn, arrays, eps)
    return max(
        max_relative_error(a, n, GRADIENT_FLOOR) for a, n in zip(analytic, numeric, strict=True)
    )
