"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and records a closure that maps
the output adjoint to input adjoints. Broadcasting is limited to a scalar
operand; callers reshape, ``repeat`` or ``add_bias`` explicitly.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any, Literal

import numpy as np

from deskmatch.autodiff._tape import Array, Tensor, record
from deskmatch.errors import DimensionError, DomainError, ParameterError

Scalar = float | int
ElementwiseOp = Literal["add", "sub", "mul", "div", "exp", "log", "relu", "square", "sqrt"]


def _as_tensor(x: Tensor | Scalar) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(float(x))


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    """Collapse an adjoint back onto a scalar-broadcast operand."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=np.float64).reshape(shape)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is scalar")


def _first_index(mask: Array) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def add(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_binary(ta, tb, "add")
    out = Tensor(ta.data + tb.data)
    return record(
        out, (ta, tb), lambda g: (_reduce_to(g, ta.shape), _reduce_to(g, tb.shape))
    )


def sub(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_binary(ta, tb, "sub")
    out = Tensor(ta.data - tb.data)
    return record(
        out, (ta, tb), lambda g: (_reduce_to(g, ta.shape), _reduce_to(-g, tb.shape))
    )


def mul(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_binary(ta, tb, "mul")
    out = Tensor(ta.data * tb.data)
    return record(
        out,
        (ta, tb),
        lambda g: (_reduce_to(g * tb.data, ta.shape), _reduce_to(g * ta.data, tb.shape)),
    )


def div(a: Tensor | Scalar, b: Tensor | Scalar) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    _check_binary(ta, tb, "div")
    zero = tb.data == 0.0
    if zero.any():
        raise DomainError(f"div: division by zero at index {_first_index(zero)}")
    out = Tensor(ta.data / tb.data)

    def adjoint(g: Array) -> tuple[Array, Array]:
        return (
            _reduce_to(g / tb.data, ta.shape),
            _reduce_to(-g * ta.data / (tb.data * tb.data), tb.shape),
        )

    return record(out, (ta, tb), adjoint)


def neg(x: Tensor) -> Tensor:
    return record(Tensor(-x.data), (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record(Tensor(y), (x,), lambda g: (g * y,))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the argument is clamped below (zero adjoint there)."""
    negative = x.data < 0.0
    if negative.any():
        raise DomainError(f"log: negative argument at index {_first_index(negative)}")
    arg = x.data if floor is None else np.maximum(x.data, floor)
    zero = arg == 0.0
    if zero.any():
        raise DomainError(f"log: zero argument at index {_first_index(zero)}")
    live = np.ones_like(arg) if floor is None else (x.data >= floor).astype(np.float64)
    return record(Tensor(np.log(arg)), (x,), lambda g: (g * live / arg,))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0.0).astype(np.float64)
    return record(Tensor(x.data * mask), (x,), lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return record(Tensor(x.data * x.data), (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    negative = x.data < 0.0
    if negative.any():
        raise DomainError(f"sqrt: negative argument at index {_first_index(negative)}")
    y = np.sqrt(x.data)
    return record(Tensor(y), (x,), lambda g: (g / (2.0 * y),))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    live = (x.data >= floor).astype(np.float64)
    return record(Tensor(np.maximum(x.data, floor)), (x,), lambda g: (g * live,))


_UNARY = {"exp": exp, "log": log, "relu": relu, "square": square, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: ElementwiseOp, a: Tensor, b: Tensor | Scalar | None = None) -> Tensor:
    """Dispatch a named pointwise operation."""
    if op in _BINARY:
        if b is None:
            raise ParameterError(f"elementwise {op!r} needs a second operand")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ParameterError(f"unknown elementwise op {op!r}")


def stop_gradient(x: Tensor) -> Tensor:
    """Value-identical tensor whose edge carries no adjoint."""
    return Tensor(x.data, requires_grad=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of [m x k] @ [k x n], or batched [B x m x k] @ [B x k x n]."""
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise DimensionError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    out = Tensor(np.matmul(a.data, b.data))

    def adjoint(g: Array) -> tuple[Array, Array]:
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return record(out, (a, b), adjoint)


def softmax(logits: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """``softmax(logits / temperature)`` along ``axis``."""
    if not temperature > 0.0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    z = logits.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g: Array) -> tuple[Array]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)) / temperature,)

    return record(Tensor(y), (logits,), adjoint)


def _conv_windows(xp: Array, k: int, stride: int, out_h: int, out_w: int) -> Array:
    """Gather [C, k, k, H', W'] patches from a padded input."""
    c = xp.shape[0]
    cols = np.empty((c, k, k, out_h, out_w), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            row_sl = slice(di, di + stride * (out_h - 1) + 1, stride)
            col_sl = slice(dj, dj + stride * (out_w - 1) + 1, stride)
            cols[:, di, dj] = xp[:, row_sl, col_sl]
    return cols


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of [C_in x H x W] with [C_out x C_in x k x k]."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d: expected [C,H,W] and [O,C,k,k], got {x.shape}, {kernels.shape}"
        )
    c_out, c_in, k, k2 = kernels.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kernels.shape}")
    if c_in != x.shape[0]:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _, h, w = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {k}x{k} larger than padded input {x.shape}")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _conv_windows(xp, k, stride, out_h, out_w).reshape(c_in * k * k, out_h * out_w)
    w2 = kernels.data.reshape(c_out, c_in * k * k)
    y = w2 @ cols
    if bias is not None:
        y = y + bias.data[:, None]
    out = Tensor(y.reshape(c_out, out_h, out_w))

    def adjoint(g: Array) -> tuple[Array, Array, Array | None]:
        g2 = g.reshape(c_out, out_h * out_w)
        d_kernels = (g2 @ cols.T).reshape(kernels.shape)
        d_cols = (w2.T @ g2).reshape(c_in, k, k, out_h, out_w)
        d_xp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                row_sl = slice(di, di + stride * (out_h - 1) + 1, stride)
                col_sl = slice(dj, dj + stride * (out_w - 1) + 1, stride)
                d_xp[:, row_sl, col_sl] += d_cols[:, di, dj]
        d_x = d_xp[:, padding : padding + h, padding : padding + w]
        d_bias = g2.sum(axis=1) if bias is not None else None
        return d_x, d_kernels, d_bias

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    if bias is None:
        return record(out, inputs, lambda g: adjoint(g)[:2])
    return record(out, inputs, adjoint)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply ``gain``/``bias``."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs features {c}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.data + bias.data)

    def adjoint(g: Array) -> tuple[Array, Array, Array]:
        lead = tuple(range(g.ndim - 1))
        d_xhat = g * gain.data
        d_x = inv_std * (
            d_xhat
            - d_xhat.mean(axis=-1, keepdims=True)
            - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return d_x, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record(out, (x, gain, bias), adjoint)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return record(Tensor(x.data.reshape(tuple(shape))), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))
    return record(Tensor(x.data.transpose(perm)), (x,), lambda g: (g.transpose(inverse),))


def sum(x: Tensor, axis: int | None = None) -> Tensor:
    src = x.shape

    def adjoint(g: Array) -> tuple[Array]:
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return record(Tensor(x.data.sum(axis=axis)), (x,), adjoint)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def index(x: Tensor, key: Any) -> Tensor:
    """numpy indexing; the adjoint scatters back with accumulation."""
    src = x.shape

    def adjoint(g: Array) -> tuple[Array]:
        d = np.zeros(src, dtype=np.float64)
        np.add.at(d, key, g)
        return (d,)

    return record(Tensor(x.data[key]), (x,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def adjoint(g: Array) -> list[Array]:
        return list(np.split(g, bounds, axis=axis))

    return record(
        Tensor(np.concatenate([t.data for t in tensors], axis=axis)), tuple(tensors), adjoint
    )


def repeat(x: Tensor, n: int, axis: int) -> Tensor:
    """Replicate a size-1 axis ``n`` times (explicit broadcast)."""
    if x.shape[axis] != 1:
        raise DimensionError(f"repeat: axis {axis} of {x.shape} must have size 1")
    return record(
        Tensor(np.repeat(x.data, n, axis=axis)),
        (x,),
        lambda g: (g.sum(axis=axis, keepdims=True),),
    )


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a [C] bias along the last axis of ``x``."""
    if bias.shape != (x.shape[-1],):
        raise DimensionError(f"add_bias: bias {bias.shape} does not match features of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return record(Tensor(x.data + bias.data), (x, bias), lambda g: (g, g.sum(axis=lead)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis of a rank-2 or rank-3 tensor."""
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    y = matmul(flat, weight)
    if bias is not None:
        y = add_bias(y, bias)
    return reshape(y, (*lead, weight.shape[1])) if x.ndim != 2 else y


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of [C x H x W] by an integer factor."""
    c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def adjoint(g: Array) -> tuple[Array]:
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return record(Tensor(y), (x,), adjoint)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding with per-axis ``(before, after)`` widths."""
    widths = tuple(widths)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape, strict=True))
    return record(Tensor(np.pad(x.data, widths)), (x,), lambda g: (g[crop],))
