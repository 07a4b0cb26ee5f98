from __future__ import annotations

import io
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from helpers import fronto_frame, oblique_pose, project, random_scene_points, toy_intrinsics

from deskmatch.dataset import decode_ppm
from deskmatch.errors import ConfigurationError, ContractError
from deskmatch.evaluation import Correspondences
from deskmatch.geometry import CameraPose
from deskmatch.scenes import ScenePair
from deskmatch.visualize import (
    OUTLIER_COLOR,
    compose,
    confidence_colors,
    encode_png,
    epipolar_inliers,
    jet,
    render_matches,
)


def _still_pair() -> ScenePair:
    frame = fronto_frame()
    return ScenePair(frame, frame, 1.0, pair_id="still")


def _one_match(confidence: float = 1.0) -> Correspondences:
    return Correspondences(np.array([[2.0, 5.0]]), np.array([[2.0, 5.0]]), np.array([confidence]))


class TestJet:
    def test_endpoints(self):
        np.testing.assert_allclose(jet([0.0, 0.5, 1.0]), [[0, 0, 0.5], [0.5, 1, 0.5], [0.5, 0, 0]])

    def test_clips_out_of_range(self):
        np.testing.assert_array_equal(jet([-2.0, 3.0]), jet([0.0, 1.0]))


class TestConfidenceColors:
    def test_top_confidence_is_orange(self):
        np.testing.assert_allclose(confidence_colors([0.0, 1.0]), [[0, 0, 0.5], [1, 0.5, 0]])

    def test_never_collides_with_outlier_color(self):
        colors = confidence_colors(np.linspace(0.0, 1.0, 201))
        assert np.abs(colors - OUTLIER_COLOR).max(axis=1).min() >= 0.5

    def test_distinct_confidences_get_distinct_colors(self):
        low, high = confidence_colors([0.2, 0.9])
        assert not np.allclose(low, high)


class TestEpipolarInliers:
    def test_exact_and_shifted_matches(self):
        frame_b = fronto_frame(pose=oblique_pose(), seed=1)
        pair = ScenePair(fronto_frame(), frame_b, 0.5)
        points = random_scene_points(20)
        intr = toy_intrinsics()
        pa = project(points, CameraPose.identity(), intr)
        pb = project(points, oblique_pose(), intr)
        pb[10:] += np.array([0.0, 6.0])
        inliers = epipolar_inliers(pair, Correspondences(pa, pb, np.ones(20)))
        assert inliers[:10].all()
        assert inliers[10:].sum() < 5

    def test_no_baseline_keeps_everything(self):
        inliers = epipolar_inliers(_still_pair(), _one_match())
        np.testing.assert_array_equal(inliers, [True])

    def test_empty(self):
        empty = Correspondences(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        assert epipolar_inliers(_still_pair(), empty).shape == (0,)


class TestCompose:
    def test_canvas_holds_both_images(self):
        pair = _still_pair()
        empty = Correspondences(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
        canvas = compose(pair, empty)
        assert canvas.shape == (32, 64, 3)
        np.testing.assert_array_equal(canvas[:, :32], pair.frame_a.image)
        np.testing.assert_array_equal(canvas[:, 32:], pair.frame_b.image)

    def test_line_spans_both_halves(self):
        canvas = compose(_still_pair(), _one_match(1.0))
        color = confidence_colors([1.0])[0]
        for x in (2, 20, 34):
            np.testing.assert_array_equal(canvas[5, x], color)

    def test_outliers_are_red(self):
        canvas = compose(_still_pair(), _one_match(0.0), inliers=[False])
        np.testing.assert_array_equal(canvas[5, 10], OUTLIER_COLOR)

    def test_source_images_untouched(self):
        pair = _still_pair()
        before = pair.frame_a.image.copy()
        compose(pair, _one_match())
        np.testing.assert_array_equal(pair.frame_a.image, before)

    def test_mask_length_must_match(self):
        with pytest.raises(ContractError, match="inlier mask"):
            compose(_still_pair(), _one_match(), inliers=[True, False])

    def test_image_shapes_must_agree(self):
        pair = ScenePair(fronto_frame(), fronto_frame(size=16), 1.0)
        with pytest.raises(ContractError, match="differ in shape"):
            compose(pair, _one_match())


class TestRenderMatches:
    def test_ppm_output(self, tmp_path: Path):
        path = tmp_path / "viz" / "matches.ppm"
        canvas = render_matches(_still_pair(), _one_match(), None, path)
        decoded = decode_ppm(path.read_bytes())
        assert decoded.shape == canvas.shape
        np.testing.assert_allclose(decoded, canvas, atol=0.5 / 255 + 1e-12)

    def test_png_output(self, tmp_path: Path):
        image_module = pytest.importorskip("PIL.Image")
        path = tmp_path / "matches.png"
        canvas = render_matches(_still_pair(), _one_match(), [True], path)
        with image_module.open(path) as image:
            assert image.size == (canvas.shape[1], canvas.shape[0])

    def test_png_without_pillow(self):
        with (
            patch.dict(sys.modules, {"PIL": None}),
            pytest.raises(ConfigurationError, match="pillow"),
        ):
            encode_png(np.zeros((2, 2, 3)))

    def test_png_bytes(self):
        pytest.importorskip("PIL")
        data = encode_png(np.ones((2, 3, 3)))
        assert io.BytesIO(data).read(8) == b"\x89PNG\r\n\x1a\n"
