"""Procedural planar scenes and an exact ray-cast RGB-D renderer."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from deskmatch.config import SceneConfig, SceneKind
from deskmatch.geometry import (
    Array,
    CameraIntrinsics,
    CameraPose,
    RgbdFrame,
    plane_homography,
    warp_correspondences,
)

logger = logging.getLogger(__name__)

Pattern = Literal["flat", "noise", "checker", "stripes"]
PairSubset = Literal["viewpoint", "illumination"]

NOISE_CELLS = 12
AMBIENT = 0.35
ROOM_HALF_EXTENT = (2.0, 1.25, 3.0)


@dataclass(frozen=True, slots=True)
class Texture:
    """Albedo as a function of in-plane coordinates (meters)."""

    pattern: Pattern
    base: Array
    accent: Array
    frequency: float = 1.0
    noise: Array | None = None

    def sample(self, s: Array, t: Array, half_u: float, half_v: float) -> Array:
        """Albedo ``[N x 3]`` at local coordinates ``(s, t)``."""
        if self.pattern == "flat":
            return np.broadcast_to(self.base, (len(s), 3)).copy()
        if self.pattern == "noise":
            assert self.noise is not None
            cells = self.noise.shape[0]
            iu = np.clip(((s + half_u) / (2 * half_u) * cells).astype(int), 0, cells - 1)
            iv = np.clip(((t + half_v) / (2 * half_v) * cells).astype(int), 0, cells - 1)
            return self.noise[iv, iu]
        if self.pattern == "checker":
            mask = (np.floor(s * self.frequency) + np.floor(t * self.frequency)) % 2 == 0
        else:
            mask = np.floor(s * self.frequency) % 2 == 0
        return np.where(mask[:, None], self.base, self.accent)


@dataclass(frozen=True, slots=True)
class Plane:
    """One-sided rectangular patch; visible from the side its normal points to."""

    center: Array
    axis_u: Array
    axis_v: Array
    half_u: float
    half_v: float
    texture: Texture

    @property
    def normal(self) -> Array:
        """Unit normal ``u x v``; the visible side faces along it."""
        return np.cross(self.axis_u, self.axis_v)

    @property
    def offset(self) -> float:
        """``d`` in the plane equation ``normal . X = d``."""
        return float(self.normal @ self.center)


@dataclass(frozen=True, slots=True)
class Scene:
    """Planes of one scene, a directional light and the region cameras look at."""

    kind: SceneKind
    planes: tuple[Plane, ...]
    light: Array
    look_region: tuple[Array, Array]

    @property
    def is_planar(self) -> bool:
        """Whether a single plane makes the pair a homography."""
        return len(self.planes) == 1


@dataclass(frozen=True, slots=True)
class Illumination:
    """Per-frame brightness gain and gamma."""

    gain: float = 1.0
    gamma: float = 1.0


@dataclass(frozen=True, slots=True)
class ScenePair:
    """Two rendered views with their covisibility and optional plane homography."""

    frame_a: RgbdFrame
    frame_b: RgbdFrame
    overlap_score: float
    gt_homography: Array | None = None
    scene_kind: SceneKind = "textured-planes"
    subset: PairSubset = "viewpoint"
    pair_id: str = ""


def _unit(v: Array) -> Array:
    return v / np.linalg.norm(v)


def _rotation(axis: Array, angle: float) -> Array:
    """Rodrigues rotation matrix."""
    k = _unit(np.asarray(axis, dtype=np.float64))
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _texture(rng: np.random.Generator, richness: float) -> Texture:
    base = rng.uniform(0.15, 0.9, size=3)
    if rng.random() >= richness:
        return Texture("flat", base, base)
    accent = np.clip(1.0 - base + rng.uniform(-0.1, 0.1, size=3), 0.05, 0.95)
    draw = rng.random()
    if draw < 0.6:
        noise = rng.uniform(0.05, 0.95, size=(NOISE_CELLS, NOISE_CELLS, 3))
        return Texture("noise", base, accent, noise=noise)
    pattern: Pattern = "checker" if draw < 0.8 else "stripes"
    return Texture(pattern, base, accent, frequency=float(rng.uniform(3.0, 6.0)))


def _facing_plane(
    rng: np.random.Generator,
    center: Array,
    half_u: float,
    half_v: float,
    tilt: float,
    texture: Texture,
) -> Plane:
    """Patch whose normal points roughly towards -z (the camera side)."""
    R = _rotation(rng.normal(size=3), tilt)
    return Plane(
        center=np.asarray(center, dtype=np.float64),
        axis_u=R @ np.array([1.0, 0.0, 0.0]),
        axis_v=R @ np.array([0.0, -1.0, 0.0]),
        half_u=half_u,
        half_v=half_v,
        texture=texture,
    )


def _light(rng: np.random.Generator) -> Array:
    return _unit(np.array([rng.uniform(-0.6, 0.6), rng.uniform(-1.0, -0.3), -1.0]))


def generate_scene(seed: int, config: SceneConfig) -> Scene:
    """Deterministic scene of the configured kind from ``seed``."""
    rng = np.random.default_rng(seed)
    planes: list[Plane] = []
    if config.kind == "textured-planes":
        back = _texture(rng, config.richness)
        planes.append(_facing_plane(rng, np.array([0.0, 0.0, 5.0]), 6.0, 6.0, 0.0, back))
        for _ in range(int(rng.integers(3, 9))):
            center = np.array(
                [rng.uniform(-1.2, 1.2), rng.uniform(-0.9, 0.9), rng.uniform(2.0, 4.0)]
            )
            tilt = float(rng.uniform(0.0, math.radians(35.0)))
            half = rng.uniform(0.35, 0.9, size=2)
            planes.append(
                _facing_plane(rng, center, half[0], half[1], tilt, _texture(rng, config.richness))
            )
        look = (np.array([-0.8, -0.6, 2.5]), np.array([0.8, 0.6, 4.0]))
    elif config.kind == "box-room":
        ex, ey, ez = ROOM_HALF_EXTENT
        # Inward-facing walls: (centre, u, v, half_u, half_v); normal = u x v.
        walls = [
            ((0.0, 0.0, ez), (1, 0, 0), (0, -1, 0), ex, ey),
            ((0.0, 0.0, -ez), (-1, 0, 0), (0, -1, 0), ex, ey),
            ((ex, 0.0, 0.0), (0, 0, -1), (0, -1, 0), ez, ey),
            ((-ex, 0.0, 0.0), (0, 0, 1), (0, -1, 0), ez, ey),
            ((0.0, ey, 0.0), (1, 0, 0), (0, 0, 1), ex, ez),
            ((0.0, -ey, 0.0), (1, 0, 0), (0, 0, -1), ex, ez),
        ]
        for center, u, v, hu, hv in walls:
            planes.append(
                Plane(
                    center=np.array(center, dtype=np.float64),
                    axis_u=np.array(u, dtype=np.float64),
                    axis_v=np.array(v, dtype=np.float64),
                    half_u=hu,
                    half_v=hv,
                    texture=_texture(rng, config.richness),
                )
            )
        look = (np.array([-ex, -ey, ez - 0.5]), np.array([ex, ey, ez]))
    else:
        tilt = float(rng.uniform(0.0, math.radians(20.0)))
        depth = float(rng.uniform(2.5, 3.5))
        texture = _texture(rng, config.richness)
        planes.append(_facing_plane(rng, np.array([0.0, 0.0, depth]), 8.0, 8.0, tilt, texture))
        look = (np.array([-0.8, -0.8, depth]), np.array([0.8, 0.8, depth]))
    return Scene(kind=config.kind, planes=tuple(planes), light=_light(rng), look_region=look)


def intrinsics_for(config: SceneConfig) -> CameraIntrinsics:
    """Pinhole intrinsics with a centred principal point."""
    f = config.focal_ratio * config.width
    return CameraIntrinsics(fx=f, fy=f, cx=(config.width - 1) / 2.0, cy=(config.height - 1) / 2.0)


def look_at(center: Array, target: Array, roll: float = 0.0) -> CameraPose:
    """Pose of a camera at ``center`` looking at ``target`` with image y pointing down."""
    z = _unit(np.asarray(target, dtype=np.float64) - center)
    x = _unit(np.cross(np.array([0.0, 1.0, 0.0]), z))
    y = np.cross(z, x)
    R = _rotation(np.array([0.0, 0.0, 1.0]), roll) @ np.stack([x, y, z])
    return CameraPose.from_matrix(R, -R @ center)


def sample_pose_pair(
    scene: Scene, rng: np.random.Generator, max_baseline: float = 0.6
) -> tuple[CameraPose, CameraPose]:
    """Two poses looking into the scene's look region from nearby viewpoints."""
    lo, hi = scene.look_region
    center_a = rng.uniform(-0.3, 0.3, size=3)
    direction = _unit(rng.normal(size=3))
    center_b = center_a + direction * rng.uniform(0.1, max_baseline)
    pose_a = look_at(center_a, rng.uniform(lo, hi), float(rng.uniform(-0.1, 0.1)))
    pose_b = look_at(center_b, rng.uniform(lo, hi), float(rng.uniform(-0.1, 0.1)))
    return pose_a, pose_b


def sample_illumination(rng: np.random.Generator, jitter: float) -> Illumination:
    """Gain and gamma drawn uniformly within ``1 +- jitter``."""
    return Illumination(
        gain=float(rng.uniform(1.0 - jitter, 1.0 + jitter)),
        gamma=float(rng.uniform(1.0 - jitter, 1.0 + jitter)),
    )


def render_frame(
    scene: Scene,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    size: tuple[int, int],
    illumination: Illumination | None = None,
) -> RgbdFrame:
    """Ray-cast ``scene`` with a z-buffer; depth is the camera-frame z of the first hit."""
    height, width = size
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pix = np.stack([xs.reshape(-1), ys.reshape(-1), np.ones(height * width)])
    rays_cam = np.linalg.solve(intrinsics.matrix, pix)
    rays = (pose.R.T @ rays_cam).T
    origin = pose.center

    depth = np.full(height * width, np.inf)
    albedo = np.zeros((height * width, 3))
    shade = np.zeros(height * width)
    for plane in scene.planes:
        n = plane.normal
        denom = rays @ n
        front = denom < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(front, (plane.offset - n @ origin) / denom, np.inf)
        hit = front & (z > 0) & (z < depth)
        if not hit.any():
            continue
        points = origin + rays[hit] * z[hit, None] - plane.center
        s = points @ plane.axis_u
        t = points @ plane.axis_v
        inside = (np.abs(s) <= plane.half_u) & (np.abs(t) <= plane.half_v)
        idx = np.flatnonzero(hit)[inside]
        depth[idx] = z[idx]
        albedo[idx] = plane.texture.sample(s[inside], t[inside], plane.half_u, plane.half_v)
        shade[idx] = AMBIENT + (1.0 - AMBIENT) * max(0.0, float(n @ scene.light))

    missed = ~np.isfinite(depth)
    depth[missed] = 0.0
    image = albedo * shade[:, None]
    light = illumination or Illumination()
    image = np.clip(light.gain * np.power(image, light.gamma), 0.0, 1.0)
    return RgbdFrame(
        image=image.reshape(height, width, 3),
        depth=depth.reshape(height, width),
        intrinsics=intrinsics,
        pose=pose,
    )


def render_pair(
    scene: Scene,
    pose_a: CameraPose,
    pose_b: CameraPose,
    intrinsics: CameraIntrinsics,
    size: tuple[int, int],
    illumination: tuple[Illumination, Illumination] | None = None,
    subset: PairSubset = "viewpoint",
) -> ScenePair:
    """Render both views and score their covisibility with the depth warp."""
    light_a, light_b = illumination or (Illumination(), Illumination())
    frame_a = render_frame(scene, pose_a, intrinsics, size, light_a)
    frame_b = render_frame(scene, pose_b, intrinsics, size, light_b)
    homography = None
    if scene.is_planar:
        plane = scene.planes[0]
        homography = plane_homography(
            intrinsics, intrinsics, pose_a, pose_b, plane.normal, plane.offset
        )
    overlap = warp_correspondences(frame_a, frame_b).overlap
    return ScenePair(
        frame_a=frame_a,
        frame_b=frame_b,
        overlap_score=overlap,
        gt_homography=homography,
        scene_kind=scene.kind,
        subset=subset,
    )
