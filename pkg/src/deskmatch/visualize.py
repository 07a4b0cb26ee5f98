"""Side-by-side match rendering: confidence-coloured lines, epipolar outliers in red."""

from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from deskmatch._io import atomic_write_bytes
from deskmatch.autodiff._tape import Array
from deskmatch.dataset import encode_ppm
from deskmatch.errors import ConfigurationError, ContractError
from deskmatch.evaluation import Correspondences
from deskmatch.geometry import epipolar_errors, essential_from_pose, relative_pose
from deskmatch.scenes import ScenePair

logger = logging.getLogger(__name__)

OUTLIER_COLOR = np.array([1.0, 0.0, 0.0])
# confidence 1 maps to orange; the deep-red end of jet is left to outliers
CONFIDENCE_SPAN = 0.75


def jet(values: ArrayLike) -> Array:
    """Blue-to-red colormap; ``[N] -> [N x 3]`` for values in [0, 1]."""
    x = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), 0.0, 1.0)[:, None]
    centers = np.array([3.0, 2.0, 1.0])
    return np.clip(1.5 - np.abs(4.0 * x - centers), 0.0, 1.0)


def confidence_colors(confidence: ArrayLike) -> Array:
    """Line colours for confidences in [0, 1], blue through orange."""
    return jet(CONFIDENCE_SPAN * np.clip(np.asarray(confidence, dtype=np.float64), 0.0, 1.0))


def epipolar_inliers(
    pair: ScenePair, matches: Correspondences, threshold: float = 5e-4
) -> NDArray[np.bool_]:
    """Matches within ``threshold`` of their ground-truth epipolar line.

    Without a baseline every match counts as an inlier.
    """
    if len(matches) == 0:
        return np.zeros(0, dtype=bool)
    a, b = pair.frame_a, pair.frame_b
    R, t = relative_pose(a.pose, b.pose)
    try:
        E = essential_from_pose(R, t)
        errors = epipolar_errors(matches.points_a, matches.points_b, a.intrinsics, b.intrinsics, E)
    except ContractError:
        return np.ones(len(matches), dtype=bool)
    return errors < threshold


def _draw_line(canvas: Array, start: Array, end: Array, color: Array) -> None:
    h, w, _ = canvas.shape
    steps = int(np.ceil(np.abs(end - start).max())) + 1
    xs = np.rint(np.linspace(start[0], end[0], steps)).astype(int)
    ys = np.rint(np.linspace(start[1], end[1], steps)).astype(int)
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    canvas[ys[keep], xs[keep]] = color


def compose(
    pair: ScenePair, matches: Correspondences, inliers: ArrayLike | None = None
) -> Array:
    """``[H x 2W x 3]`` canvas with both images and one line per match."""
    image_a, image_b = pair.frame_a.image, pair.frame_b.image
    if image_a.shape != image_b.shape:
        raise ContractError(f"images differ in shape: {image_a.shape} vs {image_b.shape}")
    width = image_a.shape[1]
    canvas = np.concatenate([image_a, image_b], axis=1).copy()
    mask = np.ones(len(matches), dtype=bool) if inliers is None else np.asarray(inliers, bool)
    if len(mask) != len(matches):
        raise ContractError(f"inlier mask has {len(mask)} entries for {len(matches)} matches")
    colors = confidence_colors(matches.confidence)
    offset = np.array([float(width), 0.0])
    for k in range(len(matches)):
        color = colors[k] if mask[k] else OUTLIER_COLOR
        _draw_line(canvas, matches.points_a[k], matches.points_b[k] + offset, color)
    return canvas


def encode_png(image: Array) -> bytes:
    """PNG bytes of an ``[H x W x 3]`` image in [0, 1]."""
    try:
        from PIL import Image
    except ImportError as e:
        raise ConfigurationError("PNG output needs pillow (install deskmatch[png])") from e
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def render_matches(
    pair: ScenePair,
    matches: Correspondences,
    inliers: ArrayLike | None,
    path: Path,
) -> Array:
    """Write the side-by-side visualisation to ``path`` and return the canvas.

    ``.png`` paths are written with pillow; anything else as binary PPM.
    """
    canvas = compose(pair, matches, inliers)
    path = Path(path)
    data = encode_png(canvas) if path.suffix.lower() == ".png" else encode_ppm(canvas)
    atomic_write_bytes(path, data)
    logger.info("Wrote %d matches to %s", len(matches), path)
    return canvas
