from __future__ import annotations

import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest
from helpers import toy_scene_config

from deskmatch.dataset import (
    INDEX_FILE,
    build_dataset,
    decode_depth,
    decode_ppm,
    encode_depth,
    encode_ppm,
    generate_pairs,
    load_pair,
    read_index,
)
from deskmatch.errors import ConfigurationError, DatasetError
from deskmatch.protocol import PairSource
from deskmatch.sources import DiskPairSource, SyntheticPairSource


@pytest.fixture(scope="module")
def dataset_root(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("bench")
    build_dataset(5, 3, root, toy_scene_config(kind="plane"))
    return root


class TestCodecs:
    def test_ppm_preserves_8bit_values(self):
        image = np.arange(4 * 8 * 3, dtype=np.float64).reshape(4, 8, 3) / 255.0
        np.testing.assert_array_equal(decode_ppm(encode_ppm(image)), image)

    def test_ppm_header_comments_are_skipped(self):
        data = b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
        np.testing.assert_array_equal(decode_ppm(data), [[[1, 0, 0], [0, 0, 1]]])

    def test_ppm_rejects_other_formats(self):
        with pytest.raises(DatasetError, match="not a binary 8-bit PPM"):
            decode_ppm(b"P3\n1 1\n255\n0 0 0\n")

    def test_ppm_truncated(self):
        data = encode_ppm(np.zeros((2, 2, 3)))[:-1]
        with pytest.raises(DatasetError, match="truncated"):
            decode_ppm(data, "a.ppm")

    def test_depth_is_float32(self):
        depth = np.array([[0.0, 1.1], [2.25, 3.3]])
        decoded = decode_depth(encode_depth(depth))
        np.testing.assert_array_equal(decoded, depth.astype(np.float32))

    def test_depth_bad_magic(self):
        data = b"XXXX" + encode_depth(np.zeros((1, 1)))[4:]
        with pytest.raises(DatasetError, match="magic"):
            decode_depth(data)

    def test_depth_short_body(self):
        with pytest.raises(DatasetError, match="expected 16"):
            decode_depth(encode_depth(np.zeros((2, 2)))[:-4])

    def test_dataset_error_carries_path(self):
        with pytest.raises(DatasetError) as exc_info:
            decode_depth(b"", Path("x/a.depth"))
        assert exc_info.value.path == Path("x/a.depth")
        assert "x/a.depth" in str(exc_info.value)


class TestGeneratePairs:
    def test_deterministic(self):
        config = toy_scene_config()
        first = list(generate_pairs(3, 2, config))
        second = list(generate_pairs(3, 2, config))
        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a.frame_a.image, b.frame_a.image)
            np.testing.assert_array_equal(a.frame_b.depth, b.frame_b.depth)

    def test_ids_and_overlap_range(self):
        config = toy_scene_config(min_overlap=0.3, max_overlap=0.9)
        pairs = list(generate_pairs(0, 3, config))
        assert [p.pair_id for p in pairs] == ["pair_00000", "pair_00001", "pair_00002"]
        for pair in pairs:
            assert 0.3 <= pair.overlap_score <= 0.9

    def test_images_are_quantized(self):
        pair = next(generate_pairs(0, 1, toy_scene_config()))
        levels = pair.frame_a.image * 255.0
        np.testing.assert_allclose(levels, np.rint(levels), atol=1e-9)

    def test_illumination_pairs_share_pose(self):
        config = toy_scene_config(illumination_fraction=0.5)
        pairs = list(generate_pairs(1, 2, config))
        assert [p.subset for p in pairs] == ["viewpoint", "illumination"]
        assert pairs[1].frame_a.pose == pairs[1].frame_b.pose

    def test_planar_pairs_carry_homography(self):
        pair = next(generate_pairs(0, 1, toy_scene_config(kind="plane")))
        assert pair.gt_homography is not None
        assert pair.scene_kind == "plane"

    def test_unreachable_overlap_raises(self):
        config = toy_scene_config(min_overlap=0.123, max_overlap=0.123)
        with (
            patch("deskmatch.dataset.MAX_REJECTIONS", 2),
            pytest.raises(ConfigurationError, match="2 consecutive"),
        ):
            list(generate_pairs(0, 1, config))


class TestDiskLayout:
    def test_index_lists_every_pair(self, dataset_root: Path):
        entries = read_index(dataset_root)
        assert [e.pair_id for e in entries] == ["pair_00000", "pair_00001", "pair_00002"]
        for entry in entries:
            assert (dataset_root / entry.pair_id / "meta.json").is_file()

    def test_load_matches_generated(self, dataset_root: Path):
        generated = next(generate_pairs(5, 1, toy_scene_config(kind="plane")))
        loaded = load_pair(dataset_root, "pair_00000")
        np.testing.assert_array_equal(loaded.frame_a.image, generated.frame_a.image)
        np.testing.assert_array_equal(loaded.frame_b.depth, generated.frame_b.depth)
        assert loaded.frame_b.pose == generated.frame_b.pose
        assert loaded.overlap_score == generated.overlap_score
        assert loaded.gt_homography is not None
        np.testing.assert_array_equal(loaded.gt_homography, generated.gt_homography)

    def test_missing_file(self, dataset_root: Path):
        with pytest.raises(DatasetError, match="cannot read"):
            load_pair(dataset_root, "pair_99999")

    def test_invalid_meta(self, tmp_path: Path):
        (tmp_path / "p").mkdir()
        (tmp_path / "p" / "meta.json").write_text(json.dumps({"overlap": 0.5}))
        with pytest.raises(DatasetError, match="invalid pair metadata"):
            load_pair(tmp_path, "p")

    def test_invalid_index(self, tmp_path: Path):
        (tmp_path / INDEX_FILE).write_text('[{"pair_id": "a", "overlap": 2.0}]')
        with pytest.raises(DatasetError, match="invalid dataset index"):
            read_index(tmp_path)


class TestSources:
    def test_both_satisfy_protocol(self, dataset_root: Path):
        assert isinstance(DiskPairSource(dataset_root), PairSource)
        assert isinstance(SyntheticPairSource(1, config=toy_scene_config()), PairSource)

    def test_disk_and_synthetic_agree(self, dataset_root: Path):
        disk = DiskPairSource(dataset_root)
        synthetic = SyntheticPairSource(3, seed=5, config=toy_scene_config(kind="plane"))
        assert disk.pair_ids() == synthetic.pair_ids()
        assert len(disk) == len(synthetic) == 3
        for a, b in zip(disk, synthetic, strict=True):
            np.testing.assert_array_equal(a.frame_a.image, b.frame_a.image)

    def test_disk_unknown_pair(self, dataset_root: Path):
        with pytest.raises(KeyError):
            DiskPairSource(dataset_root).get_pair("nope")

    def test_disk_missing_root(self, tmp_path: Path):
        with pytest.raises(DatasetError, match="does not exist"):
            DiskPairSource(tmp_path / "absent")

    def test_digest_is_stable_and_content_sensitive(self, dataset_root: Path, tmp_path: Path):
        source = DiskPairSource(dataset_root)
        assert source.digest() == DiskPairSource(dataset_root).digest()
        other = tmp_path / "other"
        build_dataset(6, 3, other, toy_scene_config(kind="plane"))
        assert DiskPairSource(other).digest() != source.digest()

    def test_synthetic_description(self):
        source = SyntheticPairSource(2, seed=4, config=toy_scene_config())
        assert source.description == "synthetic:textured-planes:seed=4:n=2"
