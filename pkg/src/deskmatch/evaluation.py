"""Benchmark runners: relative pose AUC, homography AUC, MMA, inlier and parameter counts."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from deskmatch.autodiff._tape import Array
from deskmatch.config import EvalConfig
from deskmatch.errors import ContractError, EstimationError
from deskmatch.geometry import (
    CameraIntrinsics,
    apply_homography,
    auc,
    corner_error,
    epipolar_errors,
    essential_from_pose,
    estimate_essential_ransac,
    estimate_homography_ransac,
    pose_error,
    relative_pose,
    warp_correspondences,
)
from deskmatch.model import Matcher, load_checkpoint
from deskmatch.protocol import PairSource
from deskmatch.reports import EvalReport, PairRecord, ParameterCount
from deskmatch.scenes import ScenePair

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Correspondences:
    """Full-resolution matches ``[N x 2]`` with one confidence each."""

    points_a: Array
    points_b: Array
    confidence: Array

    def __len__(self) -> int:
        return len(self.points_a)

    def top_k(self, k: int) -> Correspondences:
        """The ``k`` most confident matches; ties keep their original order."""
        order = np.argsort(-self.confidence, kind="stable")[:k]
        return Correspondences(self.points_a[order], self.points_b[order], self.confidence[order])


MatchFunction = Callable[[ScenePair], Correspondences]


def model_matches(matcher: Matcher) -> MatchFunction:
    """Match function running ``matcher`` without gradients."""

    def run(pair: ScenePair) -> Correspondences:
        return Correspondences(*matcher.match(pair).correspondences())

    return run


def oracle_matches(pair: ScenePair) -> Correspondences:
    """Ground-truth correspondences from the depth warp, all with confidence 1."""
    gt = warp_correspondences(pair.frame_a, pair.frame_b)
    return Correspondences(gt.points_a, gt.points_b, np.ones(len(gt.points_a)))


def resolve_matches(model: Matcher | Path | str | MatchFunction) -> MatchFunction:
    """Accept a loaded matcher, a checkpoint path or a match function."""
    if isinstance(model, Matcher):
        return model_matches(model)
    if isinstance(model, (str, Path)):
        return model_matches(load_checkpoint(Path(model)))
    return model


def count_inliers(
    points_a: ArrayLike,
    points_b: ArrayLike,
    intrinsics_a: CameraIntrinsics,
    intrinsics_b: CameraIntrinsics,
    rotation: Array,
    translation: Array,
    threshold: float = 5e-4,
) -> int:
    """Matches whose epipolar error under the ground-truth pose is below ``threshold``.

    A zero baseline leaves the epipolar geometry undefined and counts nothing.
    """
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    if len(pa) == 0:
        return 0
    try:
        E = essential_from_pose(rotation, translation)
        errors = epipolar_errors(pa, points_b, intrinsics_a, intrinsics_b, E)
    except ContractError as e:
        logger.warning("Cannot count inliers: %s", e)
        return 0
    return int((errors < threshold).sum())


def mma(
    points_a: ArrayLike,
    points_b: ArrayLike,
    homography: Array,
    thresholds: Sequence[float] = tuple(float(t) for t in range(1, 11)),
) -> list[float]:
    """Fraction of matches whose reprojection error under ``homography`` is below each threshold."""
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    if len(pa) == 0:
        logger.warning("MMA of an empty match set")
        return [0.0] * len(thresholds)
    pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    errors = np.linalg.norm(apply_homography(homography, pa) - pb, axis=1)
    return [float((errors < t).mean()) for t in thresholds]


def param_count(model: Matcher | Path | str) -> ParameterCount:
    """Exact float parameter count, grouped by module prefix."""
    matcher = model if isinstance(model, Matcher) else load_checkpoint(Path(model))
    return ParameterCount(
        total=matcher.params.count(),
        by_module=matcher.params.count_by_group(),
        config=matcher.config,
    )


def config_digest(config: EvalConfig, extra: str = "") -> str:
    """sha256 of the evaluation settings plus a benchmark tag."""
    h = hashlib.sha256(config.model_dump_json().encode("utf-8"))
    h.update(extra.encode("utf-8"))
    return h.hexdigest()


def evaluate_pose_pair(
    pair: ScenePair, matches: Correspondences, config: EvalConfig
) -> PairRecord:
    """Essential RANSAC on one pair; a failed estimate leaves the errors unset."""
    a, b = pair.frame_a, pair.frame_b
    R_gt, t_gt = relative_pose(a.pose, b.pose)
    record = PairRecord(
        pair_id=pair.pair_id,
        subset=pair.subset,
        n_matches=len(matches),
        n_inliers=count_inliers(
            matches.points_a,
            matches.points_b,
            a.intrinsics,
            b.intrinsics,
            R_gt,
            t_gt,
            config.inlier_threshold,
        ),
    )
    try:
        estimate = estimate_essential_ransac(
            matches.points_a,
            matches.points_b,
            a.intrinsics,
            b.intrinsics,
            threshold=config.ransac_threshold,
            iterations=config.ransac_iterations,
            seed=config.seed,
        )
    except EstimationError as e:
        logger.warning("Pose estimation failed on %s: %s", pair.pair_id, e)
        return record
    assert estimate.rotation is not None and estimate.translation is not None
    err_r, err_t, err = pose_error(estimate.rotation, estimate.translation, R_gt, t_gt)
    return record.model_copy(
        update={"rotation_error": err_r, "translation_error": err_t, "pose_error": err}
    )


def evaluate_homography_pair(
    pair: ScenePair, matches: Correspondences, config: EvalConfig
) -> PairRecord:
    """Top-k homography RANSAC, corner error and MMA on one planar pair."""
    if pair.gt_homography is None:
        raise ContractError(f"pair {pair.pair_id} has no ground-truth homography")
    kept = matches.top_k(config.top_k)
    height, width = pair.frame_a.size
    record = PairRecord(
        pair_id=pair.pair_id,
        subset=pair.subset,
        n_matches=len(kept),
        mma=mma(kept.points_a, kept.points_b, pair.gt_homography, config.mma_thresholds),
    )
    try:
        estimate = estimate_homography_ransac(
            kept.points_a,
            kept.points_b,
            threshold=config.homography_ransac_threshold,
            iterations=config.ransac_iterations,
            seed=config.seed,
        )
        error = corner_error(estimate.matrix, pair.gt_homography, (width, height))
    except (EstimationError, ContractError) as e:
        logger.warning("Homography estimation failed on %s: %s", pair.pair_id, e)
        return record
    return record.model_copy(update={"n_inliers": estimate.n_inliers, "corner_error": error})


def _run_pairs(
    source: PairSource,
    match: MatchFunction,
    evaluate: Callable[[ScenePair, Correspondences, EvalConfig], PairRecord],
    config: EvalConfig,
    threads: int,
    keep: Callable[[ScenePair], bool] = lambda pair: True,
) -> list[PairRecord]:
    def one(pair_id: str) -> PairRecord | None:
        pair = source.get_pair(pair_id)
        if not keep(pair):
            return None
        return evaluate(pair, match(pair), config)

    ids = source.pair_ids()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(pair_id) for pair_id in ids]
    return [r for r in results if r is not None]


def eval_pose(
    model: Matcher | Path | str | MatchFunction,
    source: PairSource,
    config: EvalConfig | None = None,
    threads: int = 1,
) -> EvalReport:
    """Relative pose AUC over every pair; estimation failures count as infinite error.

    Raises:
        ContractError: the source holds no pairs.
    """
    config = config or EvalConfig()
    if len(source) == 0:
        raise ContractError(f"no pairs to evaluate in {source.description}")
    records = _run_pairs(source, resolve_matches(model), evaluate_pose_pair, config, threads)
    report = EvalReport(
        benchmark="pose",
        thresholds=list(config.pose_thresholds),
        auc=auc([r.error("pose") for r in records], config.pose_thresholds),
        config_digest=config_digest(config, "pose"),
        source=source.description,
        pairs=records,
    )
    logger.info(
        "Pose AUC %s over %d pairs (mean inliers %.1f)",
        ", ".join(f"{v:.2f}" for v in report.auc),
        len(records),
        report.mean_inliers,
    )
    return report


def _has_homography(pair: ScenePair) -> bool:
    if pair.gt_homography is None:
        logger.warning("Skipping %s: no ground-truth homography", pair.pair_id)
        return False
    return True


def eval_homography(
    model: Matcher | Path | str | MatchFunction,
    source: PairSource,
    config: EvalConfig | None = None,
    threads: int = 1,
) -> EvalReport:
    """Corner-error AUC and MMA per subset on planar pairs.

    Pairs without a ground-truth homography are skipped with a warning.

    Raises:
        ContractError: no pair carries a ground-truth homography.
    """
    config = config or EvalConfig()
    records = _run_pairs(
        source,
        resolve_matches(model),
        evaluate_homography_pair,
        config,
        threads,
        keep=_has_homography,
    )
    if not records:
        raise ContractError(f"no planar pairs with a homography in {source.description}")
    subsets: dict[str, list[list[float]]] = {"overall": []}
    for record in records:
        assert record.mma is not None
        subsets["overall"].append(record.mma)
        subsets.setdefault(record.subset, []).append(record.mma)
    report = EvalReport(
        benchmark="homography",
        thresholds=list(config.homography_thresholds),
        auc=auc([r.error("homography") for r in records], config.homography_thresholds),
        mma_thresholds=list(config.mma_thresholds),
        mma={name: np.mean(rows, axis=0).tolist() for name, rows in subsets.items()},
        config_digest=config_digest(config, "homography"),
        source=source.description,
        pairs=records,
    )
    logger.info(
        "Homography AUC %s over %d pairs",
        ", ".join(f"{v:.2f}" for v in report.auc),
        len(records),
    )
    return report
