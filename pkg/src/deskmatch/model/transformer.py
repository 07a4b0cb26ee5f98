"""Positional encoding and interleaved self/cross attention blocks."""

from __future__ import annotations

import math

import numpy as np

from deskmatch.autodiff import Tensor, ops
from deskmatch.autodiff._tape import Array
from deskmatch.errors import DimensionError
from deskmatch.model.params import Parameters


def positional_encoding(channels: int, height: int, width: int) -> Array:
    """Fixed 2-D sinusoidal table ``[channels x height x width]``.

    Channels cycle through ``sin(x f), cos(x f), sin(y f), cos(y f)`` for
    geometrically spaced frequencies ``f``; positions start at 0.
    """
    if channels % 4:
        raise DimensionError(f"positional encoding needs channels divisible by 4, got {channels}")
    pe = np.zeros((channels, height, width))
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    freqs = np.exp(np.arange(0, channels // 2, 2) * (-math.log(10000.0) / (channels // 2)))
    for k, f in enumerate(freqs):
        pe[4 * k] = np.sin(xs * f)
        pe[4 * k + 1] = np.cos(xs * f)
        pe[4 * k + 2] = np.sin(ys * f)
        pe[4 * k + 3] = np.cos(ys * f)
    return pe


def positional_encode(features: Tensor) -> Tensor:
    """Add the sinusoidal table to a ``[c x h x w]`` map."""
    c, h, w = features.shape
    return features + Tensor(positional_encoding(c, h, w))


def init_attention(params: Parameters, prefix: str, dim: int) -> None:
    """Projections, layer norms and feed-forward weights of one attention block."""
    for name in ("query", "key", "value", "merge"):
        params.add(f"{prefix}.{name}", (dim, dim), "xavier")
    params.add(f"{prefix}.norm1.gain", (dim,), "ones")
    params.add(f"{prefix}.norm1.bias", (dim,), "zeros")
    params.add(f"{prefix}.mlp1.weight", (dim, 2 * dim), "he")
    params.add(f"{prefix}.mlp1.bias", (2 * dim,), "zeros")
    params.add(f"{prefix}.mlp2.weight", (2 * dim, dim), "xavier")
    params.add(f"{prefix}.mlp2.bias", (dim,), "zeros")
    params.add(f"{prefix}.norm2.gain", (dim,), "ones")
    params.add(f"{prefix}.norm2.bias", (dim,), "zeros")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """``[B x n x D]`` -> ``[B*heads x n x D/heads]``."""
    b, n, d = x.shape
    split = ops.reshape(x, (b, n, heads, d // heads))
    return ops.reshape(ops.transpose(split, (0, 2, 1, 3)), (b * heads, n, d // heads))


def _merge_heads(x: Tensor, batch: int, heads: int) -> Tensor:
    _, n, dh = x.shape
    split = ops.reshape(x, (batch, heads, n, dh))
    return ops.reshape(ops.transpose(split, (0, 2, 1, 3)), (batch, n, heads * dh))


def attention_layer(
    params: Parameters, prefix: str, x: Tensor, source: Tensor, heads: int
) -> Tensor:
    """Multi-head attention of ``x`` over ``source`` (both ``[B x n x D]``), then the MLP.

    ``h = x + LN1(MHA(x, source))``, ``out = h + LN2(MLP(h))``.
    """
    batch, _, dim = x.shape
    q = _split_heads(ops.linear(x, params[f"{prefix}.query"]), heads)
    k = _split_heads(ops.linear(source, params[f"{prefix}.key"]), heads)
    v = _split_heads(ops.linear(source, params[f"{prefix}.value"]), heads)
    scores = ops.matmul(q, ops.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dim // heads))
    attended = _merge_heads(ops.matmul(ops.softmax(scores, axis=-1), v), batch, heads)
    message = ops.linear(attended, params[f"{prefix}.merge"])
    h = x + ops.layer_norm(message, params[f"{prefix}.norm1.gain"], params[f"{prefix}.norm1.bias"])

    hidden = ops.relu(ops.linear(h, params[f"{prefix}.mlp1.weight"], params[f"{prefix}.mlp1.bias"]))
    mlp = ops.linear(hidden, params[f"{prefix}.mlp2.weight"], params[f"{prefix}.mlp2.bias"])
    return h + ops.layer_norm(mlp, params[f"{prefix}.norm2.gain"], params[f"{prefix}.norm2.bias"])


def init_interleaved(params: Parameters, prefix: str, layers: int, dim: int) -> None:
    """``layers`` self/cross block pairs under ``prefix``."""
    for layer in range(layers):
        init_attention(params, f"{prefix}.{layer}.self", dim)
        init_attention(params, f"{prefix}.{layer}.cross", dim)


def _swap_halves(x: Tensor) -> Tensor:
    half = x.shape[0] // 2
    return ops.concat([x[half:], x[:half]], axis=0)


def interleaved_attention(
    params: Parameters, prefix: str, a: Tensor, b: Tensor, layers: int, heads: int
) -> tuple[Tensor, Tensor]:
    """``layers`` blocks of self attention then cross attention, weights shared by A and B.

    Inputs are ``[B x n x D]``; both sides run as one stacked batch, and cross
    attention reads the other side's features from before the update, so
    swapping ``a`` and ``b`` swaps the outputs.
    """
    if a.shape != b.shape:
        raise DimensionError(f"attention inputs differ in shape: {a.shape} vs {b.shape}")
    half = a.shape[0]
    x = ops.concat([a, b], axis=0)
    for layer in range(layers):
        x = attention_layer(params, f"{prefix}.{layer}.self", x, x, heads)
        x = attention_layer(params, f"{prefix}.{layer}.cross", x, _swap_halves(x), heads)
    return x[:half], x[half:]


def coarse_transformer(
    params: Parameters, feat_a: Tensor, feat_b: Tensor, layers: int, heads: int
) -> tuple[Tensor, Tensor]:
    """Transform flattened coarse features ``[hw x c]`` of both images."""
    n, c = feat_a.shape
    out_a, out_b = interleaved_attention(
        params,
        "coarse",
        ops.reshape(feat_a, (1, n, c)),
        ops.reshape(feat_b, (1, n, c)),
        layers,
        heads,
    )
    return ops.reshape(out_a, (n, c)), ops.reshape(out_b, (n, c))
