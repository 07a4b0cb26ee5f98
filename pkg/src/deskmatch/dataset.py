"""On-disk synthetic benchmark: rejection-sampled pairs, PPM images and raw depth."""

from __future__ import annotations

import dataclasses
import logging
import struct
from collections.abc import Iterator
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from deskmatch._io import atomic_write_bytes, atomic_write_text
from deskmatch.config import SceneConfig, SceneKind
from deskmatch.errors import ConfigurationError, DatasetError
from deskmatch.geometry import Array, CameraIntrinsics, CameraPose, RgbdFrame, warp_correspondences
from deskmatch.scenes import (
    PairSubset,
    ScenePair,
    generate_scene,
    intrinsics_for,
    render_pair,
    sample_illumination,
    sample_pose_pair,
)

logger = logging.getLogger(__name__)

DEPTH_MAGIC = b"DPT1"
DEPTH_HEADER = struct.Struct("<4sIII")
MAX_REJECTIONS = 1000
INDEX_FILE = "index.json"
META_FILE = "meta.json"


class IndexEntry(BaseModel):
    """One row of the dataset index."""

    pair_id: str
    overlap: float = Field(ge=0, le=1)


class PairMeta(BaseModel):
    """Contents of a pair's ``meta.json``."""

    intrinsics: CameraIntrinsics
    pose_a: CameraPose
    pose_b: CameraPose
    gt_homography: list[float] | None = Field(default=None, min_length=9, max_length=9)
    scene_kind: SceneKind = "textured-planes"
    subset: PairSubset = "viewpoint"
    overlap: float = 0.0


_INDEX = TypeAdapter(list[IndexEntry])


def encode_ppm(image: Array) -> bytes:
    """Binary P6 encoding of an ``[H x W x 3]`` image in [0, 1]."""
    h, w, _ = image.shape
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_ppm(data: bytes, path: Path | str = "<memory>") -> Array:
    """Parse a binary P6 image with maxval 255 into floats in [0, 1]."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                break
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(data[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetError("not a binary 8-bit PPM", path)
    try:
        w, h = int(tokens[1]), int(tokens[2])
    except ValueError as e:
        raise DatasetError("bad PPM dimensions", path) from e
    body = data[pos + 1 : pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise DatasetError(f"PPM body truncated ({len(body)} of {w * h * 3} bytes)", path)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def encode_depth(depth: Array) -> bytes:
    """Little-endian float32 depth map behind a 16-byte header."""
    h, w = depth.shape
    return DEPTH_HEADER.pack(DEPTH_MAGIC, h, w, 0) + depth.astype("<f4").tobytes()


def decode_depth(data: bytes, path: Path | str = "<memory>") -> Array:
    """Inverse of :func:`encode_depth`; raises :class:`DatasetError` on a malformed file."""
    if len(data) < DEPTH_HEADER.size:
        raise DatasetError("depth file shorter than its header", path)
    magic, h, w, _ = DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise DatasetError(f"bad depth magic {magic!r}", path)
    body = data[DEPTH_HEADER.size :]
    if len(body) != h * w * 4:
        raise DatasetError(f"depth body has {len(body)} bytes, expected {h * w * 4}", path)
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def quantize_pair(pair: ScenePair) -> ScenePair:
    """Round images to 8 bits and depth to 32-bit floats, then re-score overlap."""

    def narrow(frame: RgbdFrame) -> RgbdFrame:
        image = np.clip(np.rint(frame.image * 255.0), 0, 255) / 255.0
        depth = frame.depth.astype(np.float32).astype(np.float64)
        return dataclasses.replace(frame, image=image, depth=depth)

    frame_a, frame_b = narrow(pair.frame_a), narrow(pair.frame_b)
    overlap = warp_correspondences(frame_a, frame_b).overlap
    return dataclasses.replace(pair, frame_a=frame_a, frame_b=frame_b, overlap_score=overlap)


def _is_illumination(k: int, fraction: float) -> bool:
    return int((k + 1) * fraction) > int(k * fraction)


def generate_pairs(seed: int, n_pairs: int, config: SceneConfig) -> Iterator[ScenePair]:
    """Yield ``n_pairs`` quantized pairs whose overlap lies in the configured range.

    Raises:
        ConfigurationError: ``MAX_REJECTIONS`` consecutive candidates were out of range.
    """
    rng = np.random.default_rng(seed)
    intrinsics = intrinsics_for(config)
    size = (config.height, config.width)
    for k in range(n_pairs):
        illumination_only = _is_illumination(k, config.illumination_fraction)
        for _ in range(MAX_REJECTIONS):
            scene = generate_scene(int(rng.integers(2**31)), config)
            pose_a, pose_b = sample_pose_pair(scene, rng)
            lights = (
                sample_illumination(rng, config.illumination_jitter),
                sample_illumination(rng, config.illumination_jitter),
            )
            if illumination_only:
                pair = render_pair(
                    scene, pose_a, pose_a, intrinsics, size, lights, subset="illumination"
                )
            else:
                pair = render_pair(scene, pose_a, pose_b, intrinsics, size, lights)
            pair = quantize_pair(pair)
            if illumination_only or config.min_overlap <= pair.overlap_score <= config.max_overlap:
                yield dataclasses.replace(pair, pair_id=f"pair_{k:05d}")
                break
        else:
            raise ConfigurationError(
                f"{MAX_REJECTIONS} consecutive pose pairs fell outside overlap "
                f"[{config.min_overlap}, {config.max_overlap}] for {config.kind!r}"
            )


def write_pair(root: Path, pair: ScenePair) -> None:
    """Write both frames and the metadata of ``pair`` under ``root/<pair_id>``."""
    pair_dir = root / pair.pair_id
    atomic_write_bytes(pair_dir / "a.ppm", encode_ppm(pair.frame_a.image))
    atomic_write_bytes(pair_dir / "b.ppm", encode_ppm(pair.frame_b.image))
    atomic_write_bytes(pair_dir / "a.depth", encode_depth(pair.frame_a.depth))
    atomic_write_bytes(pair_dir / "b.depth", encode_depth(pair.frame_b.depth))
    homography = pair.gt_homography
    meta = PairMeta(
        intrinsics=pair.frame_a.intrinsics,
        pose_a=pair.frame_a.pose,
        pose_b=pair.frame_b.pose,
        gt_homography=None if homography is None else [float(v) for v in homography.reshape(-1)],
        scene_kind=pair.scene_kind,
        subset=pair.subset,
        overlap=pair.overlap_score,
    )
    atomic_write_text(pair_dir / META_FILE, meta.model_dump_json(indent=2))


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read dataset file ({e.strerror})", path) from e


def load_pair(root: Path, pair_id: str) -> ScenePair:
    """Read one pair directory back into a :class:`ScenePair`."""
    pair_dir = Path(root) / pair_id
    meta_path = pair_dir / META_FILE
    try:
        meta = PairMeta.model_validate_json(_read(meta_path))
    except ValidationError as e:
        raise DatasetError(f"invalid pair metadata ({e.error_count()} errors)", meta_path) from e
    frames = []
    for side, pose in (("a", meta.pose_a), ("b", meta.pose_b)):
        image = decode_ppm(_read(pair_dir / f"{side}.ppm"), pair_dir / f"{side}.ppm")
        depth = decode_depth(_read(pair_dir / f"{side}.depth"), pair_dir / f"{side}.depth")
        try:
            frames.append(RgbdFrame(image, depth, meta.intrinsics, pose))
        except ValueError as e:
            raise DatasetError(str(e), pair_dir) from e
    homography = None
    if meta.gt_homography is not None:
        homography = np.array(meta.gt_homography, dtype=np.float64).reshape(3, 3)
    return ScenePair(
        frame_a=frames[0],
        frame_b=frames[1],
        overlap_score=meta.overlap,
        gt_homography=homography,
        scene_kind=meta.scene_kind,
        subset=meta.subset,
        pair_id=pair_id,
    )


def read_index(root: Path) -> list[IndexEntry]:
    """Parse ``index.json`` of a dataset root."""
    path = Path(root) / INDEX_FILE
    try:
        return _INDEX.validate_json(_read(path))
    except ValidationError as e:
        raise DatasetError(f"invalid dataset index ({e.error_count()} errors)", path) from e


def build_dataset(seed: int, n_pairs: int, out: Path, config: SceneConfig) -> list[IndexEntry]:
    """Generate ``n_pairs`` pairs under ``out`` and write ``index.json`` last."""
    out = Path(out)
    entries: list[IndexEntry] = []
    for pair in generate_pairs(seed, n_pairs, config):
        write_pair(out, pair)
        entries.append(IndexEntry(pair_id=pair.pair_id, overlap=pair.overlap_score))
        logger.debug("wrote %s (overlap %.3f)", pair.pair_id, pair.overlap_score)
    atomic_write_text(out / INDEX_FILE, _INDEX.dump_json(entries, indent=2).decode("utf-8"))
    logger.info("Wrote %d %s pairs to %s", len(entries), config.kind, out)
    return entries
