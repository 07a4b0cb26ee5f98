from __future__ import annotations

from typing import Any

import numpy as np

from deskmatch.config import MatcherConfig, SceneConfig, TrainConfig
from deskmatch.dataset import generate_pairs
from deskmatch.geometry import CameraIntrinsics, CameraPose, RgbdFrame
from deskmatch.scenes import ScenePair, look_at
from deskmatch.sources import SyntheticPairSource

TOY_SIZE = 32


def toy_matcher_config(**updates: Any) -> MatcherConfig:
    values: dict[str, Any] = {
        "backbone_widths": (4, 8, 16),
        "coarse_dim": 16,
        "fine_dim": 8,
        "coarse_layers": 1,
        "fine_layers": 1,
        "heads": 2,
    }
    values.update(updates)
    return MatcherConfig(**values)


def toy_scene_config(**updates: Any) -> SceneConfig:
    values: dict[str, Any] = {
        "height": TOY_SIZE,
        "width": TOY_SIZE,
        "min_overlap": 0.2,
        "max_overlap": 1.0,
    }
    values.update(updates)
    return SceneConfig(**values)


def toy_train_config(**updates: Any) -> TrainConfig:
    values: dict[str, Any] = {"epochs": 1, "batch_size": 2, "seed": 0}
    values.update(updates)
    return TrainConfig(**values)


def toy_source(n_pairs: int = 2, seed: int = 0, **scene: Any) -> SyntheticPairSource:
    return SyntheticPairSource(n_pairs, seed=seed, config=toy_scene_config(**scene))


def make_pair(seed: int = 0, **scene: Any) -> ScenePair:
    return next(generate_pairs(seed, 1, toy_scene_config(**scene)))


def toy_intrinsics(size: int = TOY_SIZE) -> CameraIntrinsics:
    f = 0.875 * size
    return CameraIntrinsics(fx=f, fy=f, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0)


def fronto_frame(
    depth: float = 3.0,
    pose: CameraPose | None = None,
    size: int = TOY_SIZE,
    seed: int = 0,
) -> RgbdFrame:
    """Frame of a constant-depth wall with a random image."""
    rng = np.random.default_rng(seed)
    return RgbdFrame(
        image=rng.uniform(size=(size, size, 3)),
        depth=np.full((size, size), depth),
        intrinsics=toy_intrinsics(size),
        pose=pose or CameraPose.identity(),
    )


def sideways_pose(dx: float) -> CameraPose:
    """Camera translated by ``dx`` along world x, same orientation as the identity."""
    return CameraPose.from_matrix(np.eye(3), np.array([-dx, 0.0, 0.0]))


def random_points(n: int, seed: int = 0, size: int = TOY_SIZE) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0, size - 1, size=(n, 2))


def random_scene_points(n: int, seed: int = 0) -> np.ndarray:
    """World points spread in depth in front of the identity camera."""
    rng = np.random.default_rng(seed)
    return np.column_stack(
        [rng.uniform(-1.0, 1.0, n), rng.uniform(-1.0, 1.0, n), rng.uniform(2.0, 6.0, n)]
    )


def project(points: np.ndarray, pose: CameraPose, intrinsics: CameraIntrinsics) -> np.ndarray:
    cam = points @ pose.R.T + pose.t
    uv = cam @ intrinsics.matrix.T
    return uv[:, :2] / uv[:, 2:3]


def oblique_pose() -> CameraPose:
    return look_at(np.array([0.4, -0.1, 0.2]), np.array([0.0, 0.0, 4.0]), roll=0.05)
