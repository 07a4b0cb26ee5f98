from __future__ import annotations

import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest
from helpers import (
    fronto_frame,
    oblique_pose,
    project,
    random_points,
    random_scene_points,
    sideways_pose,
    toy_intrinsics,
    toy_matcher_config,
    toy_source,
)

from deskmatch.autodiff import fresh_tape
from deskmatch.config import EvalConfig
from deskmatch.errors import ContractError
from deskmatch.evaluation import (
    Correspondences,
    config_digest,
    count_inliers,
    eval_homography,
    eval_pose,
    evaluate_homography_pair,
    evaluate_pose_pair,
    mma,
    model_matches,
    oracle_matches,
    param_count,
    resolve_matches,
)
from deskmatch.geometry import CameraPose, apply_homography, plane_homography, relative_pose
from deskmatch.model import Matcher, load_checkpoint, save_checkpoint
from deskmatch.scenes import ScenePair


class ListSource:
    def __init__(self, pairs: list[ScenePair]) -> None:
        self._pairs = {p.pair_id: p for p in pairs}

    def pair_ids(self) -> list[str]:
        return list(self._pairs)

    def get_pair(self, pair_id: str) -> ScenePair:
        return self._pairs[pair_id]

    def __len__(self) -> int:
        return len(self._pairs)

    def __iter__(self) -> Iterator[ScenePair]:
        return iter(self._pairs.values())

    @property
    def description(self) -> str:
        return "list"


@pytest.fixture(autouse=True)
def _isolated_tape():
    with fresh_tape():
        yield


def _pose_pair(pair_id: str = "p0") -> ScenePair:
    a = fronto_frame(pose=CameraPose.identity())
    b = fronto_frame(pose=oblique_pose(), seed=1)
    return ScenePair(a, b, 0.5, pair_id=pair_id)


def _exact_pose_matches(pair: ScenePair, n: int = 60) -> Correspondences:
    points = random_scene_points(n)
    intr = pair.frame_a.intrinsics
    return Correspondences(
        project(points, pair.frame_a.pose, intr),
        project(points, pair.frame_b.pose, intr),
        np.ones(n),
    )


def _wall_homography() -> np.ndarray:
    intr = toy_intrinsics()
    return plane_homography(
        intr, intr, CameraPose.identity(), sideways_pose(0.5), [0.0, 0.0, -1.0], -3.0
    )


def _planar_pair(pair_id: str, subset: str = "viewpoint") -> ScenePair:
    return ScenePair(
        fronto_frame(),
        fronto_frame(pose=sideways_pose(0.5)),
        0.8,
        gt_homography=_wall_homography(),
        scene_kind="plane",
        subset=subset,  # type: ignore[arg-type]
        pair_id=pair_id,
    )


def _exact_homography_matches(pair: ScenePair) -> Correspondences:
    src = random_points(40, seed=1)
    assert pair.gt_homography is not None
    return Correspondences(src, apply_homography(pair.gt_homography, src), np.ones(40))


class TestCorrespondences:
    def test_top_k_is_stable(self):
        points = np.arange(8.0).reshape(4, 2)
        matches = Correspondences(points, points + 1, np.array([0.2, 0.9, 0.2, 0.5]))
        kept = matches.top_k(3)
        np.testing.assert_array_equal(kept.confidence, [0.9, 0.5, 0.2])
        np.testing.assert_array_equal(kept.points_a, points[[1, 3, 0]])
        assert len(kept) == 3

    def test_top_k_larger_than_set(self):
        points = np.zeros((2, 2))
        assert len(Correspondences(points, points, np.ones(2)).top_k(10)) == 2

    def test_oracle_matches_have_unit_confidence(self):
        frame = fronto_frame()
        matches = oracle_matches(ScenePair(frame, frame, 1.0))
        assert len(matches) == 16
        np.testing.assert_array_equal(matches.confidence, 1.0)
        np.testing.assert_allclose(matches.points_a, matches.points_b, atol=1e-9)


class TestCountInliers:
    def test_exact_matches_all_count(self):
        pair = _pose_pair()
        matches = _exact_pose_matches(pair, 30)
        R, t = relative_pose(pair.frame_a.pose, pair.frame_b.pose)
        intr = toy_intrinsics()
        assert count_inliers(matches.points_a, matches.points_b, intr, intr, R, t) == 30

    def test_random_matches_mostly_fail(self):
        R, t = relative_pose(CameraPose.identity(), oblique_pose())
        intr = toy_intrinsics()
        n = count_inliers(random_points(50), random_points(50, seed=1), intr, intr, R, t, 1e-6)
        assert n < 10

    def test_empty(self):
        intr = toy_intrinsics()
        empty = np.zeros((0, 2))
        assert count_inliers(empty, empty, intr, intr, np.eye(3), np.array([1.0, 0, 0])) == 0

    def test_zero_baseline_counts_nothing(self, caplog: pytest.LogCaptureFixture):
        intr = toy_intrinsics()
        points = random_points(5)
        with caplog.at_level(logging.WARNING, logger="deskmatch.evaluation"):
            n = count_inliers(points, points, intr, intr, np.eye(3), np.zeros(3))
        assert n == 0
        assert "Cannot count inliers" in caplog.text


class TestMma:
    def test_known_offsets(self):
        pa = np.zeros((4, 2))
        pb = np.array([[0.5, 0.0], [1.5, 0.0], [3.0, 0.0], [10.0, 0.0]])
        assert mma(pa, pb, np.eye(3), (1.0, 2.0, 5.0)) == [0.25, 0.5, 0.75]

    def test_threshold_is_strict(self):
        assert mma([[0.0, 0.0]], [[1.0, 0.0]], np.eye(3), (1.0,)) == [0.0]

    def test_default_thresholds(self):
        values = mma([[0.0, 0.0]], [[0.0, 4.5]], np.eye(3))
        assert values == [0.0] * 4 + [1.0] * 6

    def test_empty_warns(self, caplog: pytest.LogCaptureFixture):
        with caplog.at_level(logging.WARNING, logger="deskmatch.evaluation"):
            values = mma(np.zeros((0, 2)), np.zeros((0, 2)), np.eye(3), (1.0, 2.0))
        assert values == [0.0, 0.0]
        assert "empty" in caplog.text


class TestParamCount:
    def test_groups_sum_to_total(self):
        matcher = Matcher.initialise(toy_matcher_config())
        count = param_count(matcher)
        assert count.total == matcher.params.count()
        assert sum(count.by_module.values()) == count.total
        assert count.config == matcher.config

    def test_from_checkpoint(self, tmp_path: Path):
        matcher = Matcher.initialise(toy_matcher_config())
        path = tmp_path / "m.stfm"
        save_checkpoint(matcher.params, matcher.config, path)
        assert param_count(str(path)).total == param_count(matcher).total

    def test_slim_model_is_smaller(self):
        full = param_count(Matcher.initialise(toy_matcher_config(coarse_layers=2)))
        slim = param_count(Matcher.initialise(toy_matcher_config(coarse_layers=2).slim()))
        assert slim.total < full.total


class TestConfigDigest:
    def test_stable(self):
        assert config_digest(EvalConfig()) == config_digest(EvalConfig())

    def test_sensitive_to_settings_and_extra(self):
        base = config_digest(EvalConfig())
        assert config_digest(EvalConfig(), "pose") != base
        assert config_digest(EvalConfig.outdoor()) != base


class TestEvaluatePosePair:
    def test_exact_matches_recover_pose(self):
        pair = _pose_pair()
        record = evaluate_pose_pair(pair, _exact_pose_matches(pair), EvalConfig(seed=3))
        assert record.n_matches == 60
        assert record.n_inliers == 60
        assert record.pose_error is not None
        assert record.pose_error < 1.0
        assert record.rotation_error is not None and record.translation_error is not None
        assert record.pose_error == max(record.rotation_error, record.translation_error)

    def test_failed_estimate_is_infinite(self, caplog: pytest.LogCaptureFixture):
        pair = _pose_pair()
        with caplog.at_level(logging.WARNING, logger="deskmatch.evaluation"):
            record = evaluate_pose_pair(pair, _exact_pose_matches(pair, 5), EvalConfig())
        assert record.pose_error is None
        assert record.error("pose") == float("inf")
        assert record.n_inliers == 5
        assert "p0" in caplog.text


class TestEvaluateHomographyPair:
    def test_exact_matches(self):
        pair = _planar_pair("h0")
        record = evaluate_homography_pair(pair, _exact_homography_matches(pair), EvalConfig())
        assert record.corner_error is not None
        assert record.corner_error < 1e-6
        assert record.n_inliers == 40
        assert record.mma == [1.0] * 10

    def test_top_k_limits_matches(self):
        pair = _planar_pair("h0")
        config = EvalConfig(top_k=12)
        record = evaluate_homography_pair(pair, _exact_homography_matches(pair), config)
        assert record.n_matches == 12

    def test_needs_homography(self):
        pair = _pose_pair()
        with pytest.raises(ContractError, match="no ground-truth homography"):
            evaluate_homography_pair(pair, _exact_pose_matches(pair), EvalConfig())


class TestEvalPose:
    def test_exact_matches_give_high_auc(self):
        source = ListSource([_pose_pair("p0"), _pose_pair("p1")])
        report = eval_pose(_exact_pose_matches, source, EvalConfig(seed=3))
        assert report.benchmark == "pose"
        assert report.thresholds == [5.0, 10.0, 20.0]
        assert report.auc[0] > 75.0
        assert report.auc == sorted(report.auc)
        assert report.recompute_auc() == report.auc
        assert report.mean_inliers == 60.0
        assert report.source == "list"

    def test_failures_pull_auc_down(self):
        def few(pair: ScenePair) -> Correspondences:
            return _exact_pose_matches(pair, 60 if pair.pair_id == "p0" else 4)

        source = ListSource([_pose_pair("p0"), _pose_pair("p1")])
        report = eval_pose(few, source, EvalConfig(seed=3))
        assert all(value <= 50.0 for value in report.auc)

    def test_empty_source(self):
        with pytest.raises(ContractError, match="no pairs"):
            eval_pose(oracle_matches, ListSource([]))

    def test_threads_do_not_change_records(self):
        source = toy_source(3, seed=2)
        serial = eval_pose(oracle_matches, source)
        threaded = eval_pose(oracle_matches, source, threads=2)
        assert serial.pairs == threaded.pairs
        assert serial.auc == threaded.auc

    def test_model_on_synthetic_pairs(self, tmp_path: Path):
        matcher = Matcher.initialise(toy_matcher_config(), seed=0)
        path = tmp_path / "m.stfm"
        save_checkpoint(matcher.params, matcher.config, path)
        source = toy_source(2, seed=0)
        report = eval_pose(path, source)
        assert [r.pair_id for r in report.pairs] == source.pair_ids()
        assert all(0.0 <= v <= 100.0 for v in report.auc)
        assert len(report.config_digest) == 64


class TestEvalHomography:
    def test_mma_per_subset(self):
        pairs = [_planar_pair("h0"), _planar_pair("h1", subset="illumination")]
        report = eval_homography(_exact_homography_matches, ListSource(pairs))
        assert report.benchmark == "homography"
        assert set(report.mma) == {"overall", "viewpoint", "illumination"}
        assert report.mma["overall"] == [1.0] * 10
        assert report.auc[0] > 99.0
        assert report.mma_thresholds == [float(t) for t in range(1, 11)]

    def test_non_planar_pairs_are_skipped(self, caplog: pytest.LogCaptureFixture):
        source = ListSource([_planar_pair("h0"), _pose_pair("p0")])
        with caplog.at_level(logging.WARNING, logger="deskmatch.evaluation"):
            report = eval_homography(_exact_homography_matches, source)
        assert [r.pair_id for r in report.pairs] == ["h0"]
        assert "Skipping p0" in caplog.text

    def test_no_planar_pairs(self):
        with pytest.raises(ContractError, match="no planar pairs"):
            eval_homography(oracle_matches, ListSource([_pose_pair()]))

    def test_csv_has_row_per_pair(self):
        report = eval_homography(_exact_homography_matches, ListSource([_planar_pair("h0")]))
        lines = report.to_csv().splitlines()
        assert lines[0].startswith("pair_id,subset")
        assert lines[1].startswith("h0,viewpoint")


class TestResolveMatches:
    def test_function_passes_through(self):
        assert resolve_matches(oracle_matches) is oracle_matches

    def test_checkpoint_path(self, tmp_path: Path):
        matcher = Matcher.initialise(toy_matcher_config(), seed=0)
        path = tmp_path / "m.stfm"
        save_checkpoint(matcher.params, matcher.config, path)
        pair = _pose_pair()
        from_path = resolve_matches(str(path))(pair)
        direct = model_matches(load_checkpoint(path))(pair)
        np.testing.assert_array_equal(from_path.points_a, direct.points_a)
        np.testing.assert_array_equal(from_path.confidence, direct.confidence)
