"""Coarse-to-fine matching: dual-softmax coarse matches refined by windowed heatmaps."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from deskmatch.autodiff import Tensor, no_grad, ops
from deskmatch.autodiff._tape import Array
from deskmatch.config import MatcherConfig
from deskmatch.errors import DimensionError
from deskmatch.geometry import FINE_SCALE, cell_pixel
from deskmatch.model.backbone import extract_features, init_backbone
from deskmatch.model.params import Parameters
from deskmatch.model.transformer import (
    coarse_transformer,
    init_interleaved,
    interleaved_attention,
    positional_encode,
)
from deskmatch.scenes import ScenePair

logger = logging.getLogger(__name__)

Indices = NDArray[np.int64]
# Fixed scale for metric indoor depth; other scenes use per-pair min-max.
METRIC_DEPTH_RANGE = 10.0


@dataclass(frozen=True, slots=True)
class MatchFeatures:
    """Transformed coarse features ``[hw x c]`` and fine maps of both images."""

    coarse_a: Tensor
    coarse_b: Tensor
    fine_a: Tensor
    fine_b: Tensor
    grid_shape: tuple[int, int]


@dataclass(frozen=True, slots=True)
class CoarseMatchSet:
    """Selected coarse matches plus the full matrices kept for the losses."""

    i: Indices
    j: Indices
    confidence: Array
    scores: Tensor
    q_h: Tensor
    q_v: Tensor
    probabilities: Tensor
    grid_shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.i)


@dataclass(frozen=True, slots=True)
class FineMatchSet:
    """Heatmap refinement of coarse matches; ``expectation`` is in window coordinates."""

    i: Indices
    j: Indices
    heatmap: Tensor
    expectation: Tensor
    variance: Tensor
    points_a: Array
    points_b: Array
    window: int
    predicted: NDArray[np.bool_]

    def __len__(self) -> int:
        return len(self.i)


@dataclass(frozen=True, slots=True)
class MatchResult:
    """Coarse and fine matches of one pair with the features they came from."""

    coarse: CoarseMatchSet
    fine: FineMatchSet
    features: MatchFeatures

    def correspondences(self) -> tuple[Array, Array, Array]:
        """Predicted ``(points_a, points_b, confidence)`` in full-resolution pixels."""
        keep = self.fine.predicted
        conf = self.coarse.probabilities.data[self.fine.i[keep], self.fine.j[keep]]
        return self.fine.points_a[keep], self.fine.points_b[keep], conf


def init_matcher(config: MatcherConfig, seed: int = 0) -> Parameters:
    """Seeded parameters for the configured architecture."""
    params = Parameters(np.random.default_rng(seed))
    init_backbone(params, config)
    init_interleaved(params, "coarse", config.coarse_layers, config.coarse_dim)
    init_interleaved(params, "fine", config.fine_layers, config.fine_width)
    return params


def correlation_matrix(feat_a: Tensor, feat_b: Tensor) -> Tensor:
    """``S(i, j) = <a_i, b_j> / c`` for ``[hw x c]`` inputs."""
    if feat_a.shape[1] != feat_b.shape[1]:
        raise DimensionError(f"feature dims differ: {feat_a.shape} vs {feat_b.shape}")
    return ops.matmul(feat_a, ops.transpose(feat_b)) * (1.0 / feat_a.shape[1])


def dual_softmax(scores: Tensor, temperature: float) -> tuple[Tensor, Tensor, Tensor]:
    """Row softmax ``Q_H``, column softmax ``Q_V`` and their product ``P_c``."""
    q_h = ops.softmax(scores, temperature, axis=1)
    q_v = ops.softmax(scores, temperature, axis=0)
    return q_h, q_v, q_h * q_v


def select_coarse_matches(
    probabilities: Array, threshold: float
) -> tuple[Indices, Indices, Array]:
    """Mutual row/column argmax entries above ``threshold``; ties go to the smallest index."""
    if probabilities.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    row_best = np.argmax(probabilities, axis=1)
    col_best = np.argmax(probabilities, axis=0)
    i = np.arange(probabilities.shape[0])
    conf = probabilities[i, row_best]
    keep = (col_best[row_best] == i) & (conf > threshold)
    return i[keep].astype(np.int64), row_best[keep].astype(np.int64), conf[keep]


def _gather_windows(fine: Tensor, centers: Array, window: int) -> Tensor:
    """Zero-padded crops around integer ``(x, y)`` centres, as ``[M x w² x C]``."""
    r = window // 2
    padded = ops.pad(fine, ((0, 0), (r, r), (r, r)))
    offsets = np.arange(window)
    cx = centers[:, 0].astype(np.int64)
    cy = centers[:, 1].astype(np.int64)
    rows = np.broadcast_to(cy[:, None, None] + offsets[None, :, None], (len(cx), window, window))
    cols = np.broadcast_to(cx[:, None, None] + offsets[None, None, :], (len(cx), window, window))
    crops = ops.index(padded, (slice(None), rows, cols))
    crops = ops.transpose(crops, (1, 2, 3, 0))
    return ops.reshape(crops, (len(cx), window * window, fine.shape[0]))


def crop_fine_windows(
    features: MatchFeatures, i: Indices, j: Indices, window: int
) -> tuple[Tensor, Tensor]:
    """Fine windows of both images with the coarse vector appended at every position."""
    grid_w = features.grid_shape[1]
    n = window * window
    windows = []
    for fine, coarse, idx in (
        (features.fine_a, features.coarse_a, i),
        (features.fine_b, features.coarse_b, j),
    ):
        centers = cell_pixel(idx, grid_w).reshape(-1, 2) / FINE_SCALE
        crop = _gather_windows(fine, centers, window)
        vec = ops.reshape(ops.index(coarse, idx), (len(idx), 1, coarse.shape[1]))
        windows.append(ops.concat([crop, ops.repeat(vec, n, axis=1)], axis=2))
    return windows[0], windows[1]


def window_grid(window: int) -> Array:
    """``(x, y)`` coordinates of each flattened window position."""
    k = np.arange(window * window)
    return np.stack([k % window, k // window], axis=1).astype(np.float64)


def expectation_and_variance(heatmap: Tensor, window: int) -> tuple[Tensor, Tensor]:
    """Heatmap mean ``[M x 2]`` and total variance ``[M]`` over window coordinates."""
    m, n = heatmap.shape
    grid = window_grid(window)
    mu = ops.matmul(heatmap, Tensor(grid))
    diff = Tensor(np.broadcast_to(grid, (m, n, 2)).copy()) - ops.repeat(
        ops.reshape(mu, (m, 1, 2)), n, axis=1
    )
    sq_dist = ops.sum(ops.square(diff), axis=2)
    return mu, ops.sum(heatmap * sq_dist, axis=1)


def fine_heatmap(window_a: Tensor, window_b: Tensor) -> Tensor:
    """Softmax over B positions of their correlation with the centre of window A."""
    m, n, d = window_a.shape
    center = ops.reshape(window_a[:, n // 2, :], (m, d, 1))
    logits = ops.reshape(ops.matmul(window_b, center), (m, n)) * (1.0 / d)
    return ops.softmax(logits, axis=1)


def refine(
    params: Parameters,
    config: MatcherConfig,
    features: MatchFeatures,
    i: Indices,
    j: Indices,
    predicted: NDArray[np.bool_] | None = None,
) -> FineMatchSet:
    """Run the fine branch at the given coarse matches."""
    w = config.window
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    grid_w = features.grid_shape[1]
    mask = np.ones(len(i), dtype=bool) if predicted is None else np.asarray(predicted, dtype=bool)
    points_a = cell_pixel(i, grid_w).reshape(-1, 2)
    if len(i) == 0:
        empty = Tensor(np.zeros((0, w * w)))
        return FineMatchSet(
            i=i,
            j=j,
            heatmap=empty,
            expectation=Tensor(np.zeros((0, 2))),
            variance=Tensor(np.zeros(0)),
            points_a=points_a,
            points_b=np.zeros((0, 2)),
            window=w,
            predicted=mask,
        )
    win_a, win_b = crop_fine_windows(features, i, j, w)
    win_a, win_b = interleaved_attention(
        params, "fine", win_a, win_b, config.fine_layers, config.heads
    )
    heatmap = fine_heatmap(win_a, win_b)
    mu, var = expectation_and_variance(heatmap, w)
    points_b = cell_pixel(j, grid_w).reshape(-1, 2) + FINE_SCALE * (mu.data - w // 2)
    return FineMatchSet(i, j, heatmap, mu, var, points_a, points_b, w, mask)


def forward_features(
    image_a: Tensor, image_b: Tensor, params: Parameters, config: MatcherConfig
) -> MatchFeatures:
    """Backbone, positional encoding and coarse transformer for both images."""
    maps_a = extract_features(image_a, params, config)
    maps_b = extract_features(image_b, params, config)
    c, h, w = maps_a.coarse.shape
    if maps_b.coarse.shape != (c, h, w):
        raise DimensionError(f"coarse maps differ: {maps_a.coarse.shape} vs {maps_b.coarse.shape}")
    flat_a = ops.transpose(ops.reshape(positional_encode(maps_a.coarse), (c, h * w)))
    flat_b = ops.transpose(ops.reshape(positional_encode(maps_b.coarse), (c, h * w)))
    out_a, out_b = coarse_transformer(params, flat_a, flat_b, config.coarse_layers, config.heads)
    return MatchFeatures(out_a, out_b, maps_a.fine, maps_b.fine, (h, w))


def match_pair(
    image_a: Tensor,
    image_b: Tensor,
    params: Parameters,
    config: MatcherConfig,
    extra: Indices | None = None,
) -> MatchResult:
    """Full pipeline on ``[C x H x W]`` inputs.

    ``extra`` (``[K x 2]`` coarse ``(i, j)`` pairs) are refined in addition to the
    selected matches, without being marked as predicted.
    """
    features = forward_features(image_a, image_b, params, config)
    scores = correlation_matrix(features.coarse_a, features.coarse_b)
    q_h, q_v, probs = dual_softmax(scores, config.temperature)
    i, j, conf = select_coarse_matches(probs.data, config.match_threshold)
    coarse = CoarseMatchSet(i, j, conf, scores, q_h, q_v, probs, features.grid_shape)

    fine_i, fine_j, predicted = i, j, np.ones(len(i), dtype=bool)
    if extra is not None and len(extra):
        chosen = set(zip(i.tolist(), j.tolist(), strict=True))
        added = [(a, b) for a, b in np.asarray(extra).tolist() if (a, b) not in chosen]
        if added:
            extra_arr = np.array(added, dtype=np.int64)
            fine_i = np.concatenate([i, extra_arr[:, 0]])
            fine_j = np.concatenate([j, extra_arr[:, 1]])
            predicted = np.concatenate([predicted, np.zeros(len(added), dtype=bool)])
    fine = refine(params, config, features, fine_i, fine_j, predicted)
    return MatchResult(coarse, fine, features)


def normalize_depths(pair: ScenePair) -> tuple[Array, Array]:
    """Depth channels in [0, 1]: fixed range for rooms, joint min-max otherwise."""
    da, db = pair.frame_a.depth, pair.frame_b.depth
    if pair.scene_kind == "box-room":
        return np.clip(da / METRIC_DEPTH_RANGE, 0, 1), np.clip(db / METRIC_DEPTH_RANGE, 0, 1)
    valid = np.concatenate([da[da > 0], db[db > 0]])
    if valid.size == 0:
        return np.zeros_like(da), np.zeros_like(db)
    lo, hi = float(valid.min()), float(valid.max())
    span = hi - lo if hi > lo else 1.0

    def scale(d: Array) -> Array:
        return np.where(d > 0, np.clip((d - lo) / span, 0.0, 1.0), 0.0)

    return scale(da), scale(db)


def model_inputs(pair: ScenePair, input_channels: int) -> tuple[Tensor, Tensor]:
    """``[C x H x W]`` inputs: RGB, plus normalized depth for 4-channel models."""
    rgb_a = pair.frame_a.image.transpose(2, 0, 1)
    rgb_b = pair.frame_b.image.transpose(2, 0, 1)
    if input_channels == 3:
        return Tensor(rgb_a), Tensor(rgb_b)
    da, db = normalize_depths(pair)
    return Tensor(np.concatenate([rgb_a, da[None]])), Tensor(np.concatenate([rgb_b, db[None]]))


@dataclass
class Matcher:
    """Parameters bound to their configuration."""

    params: Parameters
    config: MatcherConfig

    @classmethod
    def initialise(cls, config: MatcherConfig, seed: int = 0) -> Matcher:
        """Freshly initialised weights for ``config``."""
        return cls(init_matcher(config, seed), config)

    def match(self, pair: ScenePair) -> MatchResult:
        """Inference on a pair without recording gradients."""
        with no_grad():
            image_a, image_b = model_inputs(pair, self.config.input_channels)
            return match_pair(image_a, image_b, self.params, self.config)
