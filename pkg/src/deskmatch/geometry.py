"""Camera models, depth-warped ground truth and robust two-view estimation.

Conventions:
    * Poses map world to camera: ``X_cam = R @ X_world + t``.
    * Pixel centres sit at integer coordinates, points are ``(x, y)`` = (column, row).
    * Coarse cell ``(r, c)`` is represented by pixel ``(8c, 8r)``; its flattened
      index is ``r * grid_width + c``.
    * Fine-window coordinates are ``(x, y)`` with the window centre at
      ``(w // 2, w // 2)``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, Field, model_validator

from deskmatch.errors import ContractError, EstimationError, InsufficientDataError

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

COARSE_STRIDE = 8
FINE_SCALE = 2
OCCLUSION_TOLERANCE = 0.05
RANSAC_CONFIDENCE = 0.999
# Relative singular-value floor below which an 8-point design matrix is rank deficient.
RANK_TOLERANCE = 1e-9


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics in pixels."""

    fx: float = Field(gt=0, description="Focal length along x")
    fy: float = Field(gt=0, description="Focal length along y")
    cx: float = Field(description="Principal point x")
    cy: float = Field(description="Principal point y")

    @property
    def matrix(self) -> Array:
        """The 3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def normalize(self, points: ArrayLike) -> Array:
        """Map pixel points ``[N x 2]`` to normalized image coordinates."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return np.stack([(pts[:, 0] - self.cx) / self.fx, (pts[:, 1] - self.cy) / self.fy], axis=1)


class CameraPose(BaseModel):
    """World-to-camera rigid transform."""

    rotation: list[float] = Field(min_length=9, max_length=9, description="Row-major 3x3")
    translation: list[float] = Field(min_length=3, max_length=3, description="Meters")

    @model_validator(mode="after")
    def _check_rotation(self) -> Self:
        R = self.R
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        return self

    @classmethod
    def from_matrix(cls, rotation: ArrayLike, translation: ArrayLike) -> CameraPose:
        """Build from a 3x3 rotation and a 3-vector translation."""
        R = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        return cls(rotation=[float(v) for v in R.reshape(-1)], translation=[float(v) for v in t])

    @classmethod
    def identity(cls) -> CameraPose:
        """Camera at the world origin looking down +z."""
        return cls.from_matrix(np.eye(3), np.zeros(3))

    @property
    def R(self) -> Array:
        """World-to-camera rotation."""
        return np.array(self.rotation, dtype=np.float64).reshape(3, 3)

    @property
    def t(self) -> Array:
        """World-to-camera translation."""
        return np.array(self.translation, dtype=np.float64)

    @property
    def center(self) -> Array:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t


@dataclass(frozen=True, slots=True)
class RgbdFrame:
    """One view: image ``[H x W x 3]`` in [0, 1], depth ``[H x W]`` in meters (0 = invalid)."""

    image: Array
    depth: Array
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def __post_init__(self) -> None:
        h, w = self.depth.shape
        if self.image.shape != (h, w, 3):
            raise ContractError(f"image {self.image.shape} does not match depth {self.depth.shape}")
        if h % COARSE_STRIDE or w % COARSE_STRIDE:
            raise ContractError(f"frame size {h}x{w} must be divisible by {COARSE_STRIDE}")
        if not np.all(np.isfinite(self.depth)) or (self.depth < 0).any():
            raise ContractError("depth must be finite and non-negative")

    @property
    def size(self) -> tuple[int, int]:
        """``(height, width)``."""
        return self.depth.shape[0], self.depth.shape[1]


@dataclass(frozen=True, slots=True)
class CorrespondenceGT:
    """Depth-warped coarse matches and their fine targets.

    ``matches`` holds flattened ``(i, j)`` coarse indices, ``fine_targets`` the
    exact reprojection in fine-window coordinates around ``j``. ``warped`` holds
    the frame-B pixel of every covisible frame-A cell (NaN elsewhere) so fine
    targets can be derived for any predicted ``j``.
    """

    grid_shape: tuple[int, int]
    matches: NDArray[np.int64]
    fine_targets: Array
    points_a: Array
    points_b: Array
    valid_mask: NDArray[np.bool_]
    warped: Array
    window: int

    @property
    def overlap(self) -> float:
        """Share of valid coarse cells in view A that found a match."""
        valid = int(self.valid_mask.sum())
        return len(self.matches) / valid if valid else 0.0

    def fine_target(self, i: int, j: int) -> Array | None:
        """Target of A cell ``i`` inside the window around B cell ``j``, if it lies there."""
        p = self.warped[i]
        if not np.all(np.isfinite(p)):
            return None
        target = window_coordinates(p, j, self.grid_shape[1], self.window)
        if (target < 0).any() or (target > self.window - 1).any():
            return None
        return target


def cell_pixel(index: int | NDArray[np.int64], grid_width: int) -> Array:
    """Full-resolution pixel ``(x, y)`` representing coarse cell ``index``."""
    idx = np.asarray(index)
    return np.stack([idx % grid_width, idx // grid_width], axis=-1).astype(np.float64) * (
        COARSE_STRIDE
    )


def window_coordinates(pixel: Array, j: int, grid_width: int, window: int) -> Array:
    """Express a full-resolution pixel in the fine window centred on coarse cell ``j``."""
    centre = cell_pixel(j, grid_width) / FINE_SCALE
    return np.asarray(pixel, dtype=np.float64) / FINE_SCALE - centre + window // 2


def relative_pose(pose_a: CameraPose, pose_b: CameraPose) -> tuple[Array, Array]:
    """``(R, t)`` mapping camera-A coordinates to camera-B coordinates."""
    R = pose_b.R @ pose_a.R.T
    return R, pose_b.t - R @ pose_a.t


def skew(v: ArrayLike) -> Array:
    """Cross-product matrix: ``skew(v) @ u == v x u``."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def essential_from_pose(R: Array, t: Array) -> Array:
    """E = [t]x R for the relative pose (R, t)."""
    return skew(t) @ R


def _warp(
    src: RgbdFrame, dst: RgbdFrame, pixels: Array
) -> tuple[Array, Array, NDArray[np.bool_]]:
    """Project ``src`` pixels into ``dst``; return (dst pixels, dst depths, in-front mask)."""
    z = src.depth[pixels[:, 1].astype(int), pixels[:, 0].astype(int)]
    rays = np.linalg.solve(src.intrinsics.matrix, np.vstack([pixels.T, np.ones(len(pixels))]))
    R, t = relative_pose(src.pose, dst.pose)
    cam = R @ (rays * z) + t[:, None]
    in_front = (z > 0) & (cam[2] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = dst.intrinsics.matrix @ cam
        uv = (proj[:2] / proj[2]).T
    return uv, cam[2], in_front


def _covisible(
    src: RgbdFrame, dst: RgbdFrame, tolerance: float
) -> tuple[Array, NDArray[np.bool_], NDArray[np.int64]]:
    """Warp every coarse cell of ``src``; return pixels, covisibility and nearest dst cell."""
    h, w = src.size
    gh, gw = h // COARSE_STRIDE, w // COARSE_STRIDE
    pixels = cell_pixel(np.arange(gh * gw), gw)
    uv, z_dst, ok = _warp(src, dst, pixels)
    dh, dw = dst.size
    col = np.rint(uv[:, 0])
    row = np.rint(uv[:, 1])
    ok &= np.isfinite(uv).all(axis=1)
    ok &= (col >= 0) & (col < dw) & (row >= 0) & (row < dh)
    rows = np.where(ok, row, 0).astype(int)
    cols = np.where(ok, col, 0).astype(int)
    observed = dst.depth[rows, cols]
    ok &= observed > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ok &= np.abs(observed - z_dst) <= tolerance * np.abs(z_dst)

    cr = np.rint(uv[:, 1] / COARSE_STRIDE)
    cc = np.rint(uv[:, 0] / COARSE_STRIDE)
    dgh, dgw = dh // COARSE_STRIDE, dw // COARSE_STRIDE
    ok &= (cr >= 0) & (cr < dgh) & (cc >= 0) & (cc < dgw)
    nearest = np.where(ok, np.where(ok, cr, 0) * dgw + np.where(ok, cc, 0), -1).astype(np.int64)
    return uv, ok, nearest


def warp_correspondences(
    frame_a: RgbdFrame,
    frame_b: RgbdFrame,
    window: int = 5,
    occlusion_tolerance: float = OCCLUSION_TOLERANCE,
) -> CorrespondenceGT:
    """Mutual-nearest-neighbour coarse matches and subpixel fine targets from depth."""
    h, w = frame_a.size
    gh, gw = h // COARSE_STRIDE, w // COARSE_STRIDE
    uv_ab, ok_ab, nn_ab = _covisible(frame_a, frame_b, occlusion_tolerance)
    _, _, nn_ba = _covisible(frame_b, frame_a, occlusion_tolerance)

    valid = frame_a.depth[::COARSE_STRIDE, ::COARSE_STRIDE].reshape(-1) > 0
    warped = np.where(ok_ab[:, None], uv_ab, np.nan)

    pairs: list[tuple[int, int]] = []
    targets: list[Array] = []
    for i in np.flatnonzero(ok_ab):
        j = int(nn_ab[i])
        if nn_ba[j] != i:
            continue
        target = window_coordinates(uv_ab[i], j, frame_b.size[1] // COARSE_STRIDE, window)
        if (target < 0).any() or (target > window - 1).any():
            continue
        pairs.append((int(i), j))
        targets.append(target)

    matches = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    points_a = cell_pixel(matches[:, 0], gw).reshape(-1, 2)
    points_b = uv_ab[matches[:, 0]].reshape(-1, 2)
    return CorrespondenceGT(
        grid_shape=(gh, gw),
        matches=matches,
        fine_targets=np.array(targets, dtype=np.float64).reshape(-1, 2),
        points_a=points_a,
        points_b=points_b,
        valid_mask=valid,
        warped=warped,
        window=window,
    )


def epipolar_errors(
    points_a: ArrayLike,
    points_b: ArrayLike,
    intrinsics_a: CameraIntrinsics,
    intrinsics_b: CameraIntrinsics,
    essential: Array,
) -> Array:
    """Symmetric squared epipolar distance in normalized coordinates, one per match."""
    if not np.any(essential):
        raise ContractError("essential matrix is all zeros")
    xa = intrinsics_a.normalize(points_a)
    xb = intrinsics_b.normalize(points_b)
    if len(xa) != len(xb):
        raise ContractError(f"{len(xa)} points in A but {len(xb)} in B")
    ha = np.hstack([xa, np.ones((len(xa), 1))])
    hb = np.hstack([xb, np.ones((len(xb), 1))])
    Ex = ha @ essential.T
    Etx = hb @ essential
    r = np.einsum("ij,ij->i", hb, Ex)
    tiny = np.finfo(np.float64).tiny
    d_b = np.maximum(Ex[:, 0] ** 2 + Ex[:, 1] ** 2, tiny)
    d_a = np.maximum(Etx[:, 0] ** 2 + Etx[:, 1] ** 2, tiny)
    return r * r * (1.0 / d_b + 1.0 / d_a)


def epipolar_error(
    point_a: ArrayLike,
    point_b: ArrayLike,
    intrinsics_a: CameraIntrinsics,
    intrinsics_b: CameraIntrinsics,
    rotation: Array,
    translation: Array,
) -> float:
    """Epipolar error of a single correspondence under relative pose ``(R, t)``."""
    E = essential_from_pose(rotation, translation)
    return float(epipolar_errors(point_a, point_b, intrinsics_a, intrinsics_b, E)[0])


@dataclass(frozen=True, slots=True)
class TwoViewEstimate:
    """Robust fit result; ``rotation``/``translation`` are set for the essential case."""

    matrix: Array
    inlier_mask: NDArray[np.bool_]
    rotation: Array | None = None
    translation: Array | None = None
    iterations: int = 0

    @property
    def n_inliers(self) -> int:
        """Size of the consensus set."""
        return int(self.inlier_mask.sum())


def _hartley(points: Array) -> tuple[Array, Array]:
    """Similarity moving the centroid to 0 with mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    scale = math.sqrt(2.0) / dist if dist > 0 else 1.0
    T = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    homog = np.hstack([points, np.ones((len(points), 1))]) @ T.T
    return homog, T


def _eight_point(xa: Array, xb: Array) -> Array | None:
    """Normalized 8-point essential matrix projected to singular values (s, s, 0)."""
    ha, Ta = _hartley(xa)
    hb, Tb = _hartley(xb)
    A = np.einsum("ni,nj->nij", hb, ha).reshape(len(xa), 9)
    _, s, vt = np.linalg.svd(A)
    if len(s) < 8 or s[7] <= RANK_TOLERANCE * s[0]:
        return None
    E = Tb.T @ vt[-1].reshape(3, 3) @ Ta
    U, S, Vt = np.linalg.svd(E)
    sigma = (S[0] + S[1]) / 2.0
    if sigma <= 0:
        return None
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def _triangulate_depths(R: Array, t: Array, xa: Array, xb: Array) -> tuple[Array, Array]:
    """Linear triangulation; returns depths in camera A and camera B."""
    Pa = np.hstack([np.eye(3), np.zeros((3, 1))])
    Pb = np.hstack([R, t[:, None]])
    rows = np.stack(
        [
            xa[:, :1] * Pa[2] - Pa[0],
            xa[:, 1:2] * Pa[2] - Pa[1],
            xb[:, :1] * Pb[2] - Pb[0],
            xb[:, 1:2] * Pb[2] - Pb[1],
        ],
        axis=1,
    )
    _, _, vt = np.linalg.svd(rows)
    X = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = X[:, :3] / X[:, 3:]
    za = X[:, 2]
    zb = (X @ R.T + t)[:, 2]
    return za, zb


def decompose_essential(E: Array, xa: Array, xb: Array) -> tuple[Array, Array]:
    """Pick the ``(R, unit t)`` candidate placing most points in front of both cameras."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    best: tuple[int, Array, Array] | None = None
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for sign in (1.0, -1.0):
            za, zb = _triangulate_depths(R, sign * t, xa, xb)
            front = int(np.sum((za > 0) & (zb > 0) & np.isfinite(za) & np.isfinite(zb)))
            if best is None or front > best[0]:
                best = (front, R, sign * t)
    assert best is not None
    return best[1], best[2] / np.linalg.norm(best[2])


def _required_iterations(inlier_ratio: float, sample_size: int) -> float:
    if inlier_ratio <= 0:
        return math.inf
    good = inlier_ratio**sample_size
    if good >= 1.0:
        return 0.0
    return math.log(1.0 - RANSAC_CONFIDENCE) / math.log(1.0 - good)


def estimate_essential_ransac(
    points_a: ArrayLike,
    points_b: ArrayLike,
    intrinsics_a: CameraIntrinsics,
    intrinsics_b: CameraIntrinsics,
    threshold: float = 5e-4,
    iterations: int = 1000,
    seed: int = 0,
) -> TwoViewEstimate:
    """Essential matrix by 8-point RANSAC, refit on inliers, and cheirality decomposition.

    Raises:
        InsufficientDataError: fewer than 8 matches.
        EstimationError: every sample was degenerate (e.g. zero baseline).
    """
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    n = len(pa)
    if n < 8:
        raise InsufficientDataError(f"essential estimation needs 8 matches, got {n}")
    xa = intrinsics_a.normalize(pa)
    xb = intrinsics_b.normalize(pb)
    identity = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    rng = np.random.default_rng(seed)

    best_E: Array | None = None
    best_mask = np.zeros(n, dtype=bool)
    done = 0
    for done in range(1, iterations + 1):
        sample = rng.choice(n, size=8, replace=False)
        E = _eight_point(xa[sample], xb[sample])
        if E is None:
            continue
        mask = epipolar_errors(xa, xb, identity, identity, E) < threshold
        if mask.sum() > best_mask.sum():
            best_E, best_mask = E, mask
        if done >= _required_iterations(best_mask.mean(), 8):
            break
    if best_E is None:
        raise EstimationError(f"all {done} essential samples were degenerate")
    logger.debug("essential RANSAC: %d iterations, %d/%d inliers", done, best_mask.sum(), n)

    if best_mask.sum() >= 8:
        refit = _eight_point(xa[best_mask], xb[best_mask])
        if refit is not None:
            mask = epipolar_errors(xa, xb, identity, identity, refit) < threshold
            if mask.sum() >= best_mask.sum():
                best_E, best_mask = refit, mask

    R, t = decompose_essential(best_E, xa[best_mask], xb[best_mask])
    return TwoViewEstimate(best_E, best_mask, rotation=R, translation=t, iterations=done)


def pose_error(
    rotation: Array, translation: Array, rotation_gt: Array, translation_gt: Array
) -> tuple[float, float, float]:
    """``(rotation_deg, translation_angle_deg, max)``; zero GT baseline gives angle 0."""
    cos_r = (np.trace(rotation @ rotation_gt.T) - 1.0) / 2.0
    err_r = math.degrees(math.acos(float(np.clip(cos_r, -1.0, 1.0))))
    norm_gt = float(np.linalg.norm(translation_gt))
    norm_est = float(np.linalg.norm(translation))
    if norm_gt == 0.0 or norm_est == 0.0:
        err_t = 0.0
    else:
        cos_t = float(np.dot(translation, translation_gt)) / (norm_est * norm_gt)
        err_t = math.degrees(math.acos(float(np.clip(cos_t, -1.0, 1.0))))
    return err_r, err_t, max(err_r, err_t)


def apply_homography(H: Array, points: ArrayLike) -> Array:
    """Map pixel points ``[N x 2]`` through ``H``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    proj = np.hstack([pts, np.ones((len(pts), 1))]) @ H.T
    if np.any(proj[:, 2] == 0):
        raise ContractError("homography maps a point to infinity")
    return proj[:, :2] / proj[:, 2:]


def _collinear(points: Array) -> bool:
    scale = max(float(np.abs(points - points.mean(axis=0)).max()), 1e-12)
    for a in range(4):
        for b in range(a + 1, 4):
            for c in range(b + 1, 4):
                u, v = points[b] - points[a], points[c] - points[a]
                if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * scale * scale:
                    return True
    return False


def _dlt(src: Array, dst: Array) -> Array | None:
    hs, Ts = _hartley(src)
    hd, Td = _hartley(dst)
    zeros = np.zeros((len(src), 3))
    rows_x = np.hstack([-hs, zeros, hd[:, :1] * hs])
    rows_y = np.hstack([zeros, -hs, hd[:, 1:2] * hs])
    A = np.vstack([rows_x, rows_y])
    _, _, vt = np.linalg.svd(A)
    H = np.linalg.solve(Td, vt[-1].reshape(3, 3) @ Ts)
    if abs(H[2, 2]) < 1e-12 * np.abs(H).max():
        return None
    return H / H[2, 2]


def transfer_errors(H: Array, src: Array, dst: Array) -> Array:
    """Mean of forward and backward transfer distances in pixels."""
    try:
        H_inv = np.linalg.inv(H)
        fwd = np.linalg.norm(apply_homography(H, src) - dst, axis=1)
        bwd = np.linalg.norm(apply_homography(H_inv, dst) - src, axis=1)
    except (np.linalg.LinAlgError, ContractError):
        return np.full(len(src), np.inf)
    return (fwd + bwd) / 2.0


def estimate_homography_ransac(
    points_a: ArrayLike,
    points_b: ArrayLike,
    threshold: float = 3.0,
    iterations: int = 1000,
    seed: int = 0,
) -> TwoViewEstimate:
    """Homography by normalized 4-point DLT RANSAC with a least-squares refit (h33 = 1)."""
    src = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientDataError(f"homography estimation needs 4 matches, got {n}")
    rng = np.random.default_rng(seed)

    best_H: Array | None = None
    best_mask = np.zeros(n, dtype=bool)
    done = 0
    for done in range(1, iterations + 1):
        sample = rng.choice(n, size=4, replace=False)
        if _collinear(src[sample]) or _collinear(dst[sample]):
            continue
        H = _dlt(src[sample], dst[sample])
        if H is None:
            continue
        mask = transfer_errors(H, src, dst) < threshold
        if mask.sum() > best_mask.sum() or best_H is None:
            best_H, best_mask = H, mask
        if done >= _required_iterations(best_mask.mean(), 4):
            break
    if best_H is None:
        raise EstimationError(f"all {done} homography samples were collinear or degenerate")
    logger.debug("homography RANSAC: %d iterations, %d/%d inliers", done, best_mask.sum(), n)

    if best_mask.sum() > 4:
        refit = _dlt(src[best_mask], dst[best_mask])
        if refit is not None:
            mask = transfer_errors(refit, src, dst) < threshold
            if mask.sum() >= best_mask.sum():
                best_H, best_mask = refit, mask
    return TwoViewEstimate(best_H, best_mask, iterations=done)


def image_corners(width: int, height: int) -> Array:
    """Pixel centres of the four image corners, clockwise from the top left."""
    return np.array(
        [[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]]
    )


def corner_error(H_est: Array, H_gt: Array, image_size: tuple[int, int]) -> float:
    """Mean distance between the four image corners mapped by ``H_est`` and ``H_gt``.

    Args:
        H_est: Estimated homography.
        H_gt: Ground-truth homography.
        image_size: ``(width, height)`` in pixels.
    """
    for name, H in (("estimated", H_est), ("ground-truth", H_gt)):
        scale = float(np.abs(H).max())
        if scale == 0.0 or abs(np.linalg.det(H / scale)) < 1e-12:
            raise ContractError(f"{name} homography is singular")
    corners = image_corners(*image_size)
    diff = apply_homography(H_est, corners) - apply_homography(H_gt, corners)
    return float(np.linalg.norm(diff, axis=1).mean())


def plane_homography(
    intrinsics_a: CameraIntrinsics,
    intrinsics_b: CameraIntrinsics,
    pose_a: CameraPose,
    pose_b: CameraPose,
    normal: ArrayLike,
    offset: float,
) -> Array:
    """Homography A -> B induced by the world plane ``normal . X = offset`` (h33 = 1)."""
    n_a = pose_a.R @ np.asarray(normal, dtype=np.float64)
    d_a = offset + float(n_a @ pose_a.t)
    if d_a == 0.0:
        raise ContractError("plane passes through camera A")
    R, t = relative_pose(pose_a, pose_b)
    H = intrinsics_b.matrix @ (R + np.outer(t, n_a) / d_a) @ np.linalg.inv(intrinsics_a.matrix)
    return H / H[2, 2]


def auc(errors: Sequence[float] | Array, thresholds: Sequence[float]) -> list[float]:
    """Area under the cumulative recall curve on ``[0, t]``, in percent, per threshold.

    Integrates the empirical step function exactly; ``inf`` marks a failed estimate.
    """
    errs = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errs.size == 0:
        raise ContractError("auc needs at least one error")
    ts = np.asarray(thresholds, dtype=np.float64)
    if ts.size == 0 or (ts <= 0).any() or (np.diff(ts) <= 0).any():
        raise ContractError(f"thresholds must be positive and increasing, got {list(ts)}")
    out = []
    for t in ts:
        area = np.clip(t - errs, 0.0, None).sum() / (errs.size * t)
        out.append(float(100.0 * area))
    return out
