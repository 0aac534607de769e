import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partguide.dataset import (DatasetError, FeatureBlob, SegmentMask,
                               decode_rle, encode_rle, gsfv_byte_length,
                               load_features, load_manifest, load_manifest,
                               load_similarity_scores, merge_class,
                               save_similarity_scores, write_features)


def write_manifest(tmp_path, payload):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(payload))
    return path


class TestManifest:
    def test_merge_collapses_sided_classes(self, tmp_path):
        path = write_manifest(tmp_path, {
            "dataset_id": "d",
            "part_classes": ["left mirror", "right mirror"],
            "merge_table": {"left mirror": "mirror", "right mirror": "mirror"},
            "images": [{"id": "a", "width": 10, "height": 10,
                        "mask_sources": {"left mirror": "m1.json",
                                         "right mirror": "m2.json"}}],
        })
        manifest = load_manifest(path)
        assert manifest.part_classes == ["mirror"]
        assert set(manifest.images[0].mask_sources) == {"mirror"}
        assert len(manifest.images[0].mask_sources["mirror"]) == 2

    def test_empty_images_is_valid(self, tmp_path):
        path = write_manifest(tmp_path, {"part_classes": ["wheel"],
                                         "images": []})
        manifest = load_manifest(path)
        assert manifest.images == []

    def test_unknown_mask_class_rejected(self, tmp_path):
        path = write_manifest(tmp_path, {
            "part_classes": ["wheel"],
            "images": [{"id": "a", "width": 4, "height": 4,
                        "mask_sources": {"door": "m.json"}}]})
        with pytest.raises(DatasetError, match="not in part_classes"):
            load_manifest(path)

    def test_duplicate_image_id_rejected(self, tmp_path):
        path = write_manifest(tmp_path, {
            "part_classes": ["wheel"],
            "images": [{"id": "a", "width": 4, "height": 4},
                       {"id": "a", "width": 4, "height": 4}]})
        with pytest.raises(DatasetError, match="duplicate"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="not found"):
            load_manifest(tmp_path / "nope.json")

    def test_merge_is_idempotent(self):
        table = {"left mirror": "mirror", "right door": "door"}
        for name in ["left mirror", "right door", "wheel", "mirror"]:
            once = merge_class(name, table)
            assert merge_class(once, table) == once


class TestRle:
    def test_empty_mask(self):
        grid = decode_rle(SegmentMask("a", "c", 4, 4, []))
        assert grid.shape == (4, 4)
        assert not grid.any()

    def test_single_run_first_row(self):
        grid = decode_rle(SegmentMask("a", "c", 4, 4, [(0, 4)]))
        assert grid[0].all()
        assert not grid[1:].any()

    def test_round_trip_random_8x8_against_pixel_loop(self):
        rng = np.random.default_rng(3)
        grid = rng.random((8, 8)) > 0.5
        mask = encode_rle(grid, "a", "c")
        decoded = decode_rle(mask)
        for y in range(8):
            for x in range(8):
                assert decoded[y, x] == grid[y, x]
        assert encode_rle(decoded).rle == mask.rle

    def test_run_exceeding_bounds(self):
        with pytest.raises(DatasetError, match="exceeds"):
            decode_rle(SegmentMask("a", "c", 4, 4, [(14, 3)]))

    def test_overlapping_runs(self):
        with pytest.raises(DatasetError, match="overlapping"):
            decode_rle(SegmentMask("a", "c", 4, 4, [(0, 3), (2, 2)]))

    def test_popcount_matches_run_sum(self):
        mask = SegmentMask("a", "c", 4, 4, [(1, 3), (8, 2)])
        assert decode_rle(mask).sum() == mask.popcount() == 5

    @settings(max_examples=50)
    @given(st.lists(st.booleans(), min_size=12, max_size=12))
    def test_round_trip_property(self, bits):
        grid = np.array(bits).reshape(3, 4)
        mask = encode_rle(grid)
        assert (decode_rle(mask) == grid).all()
        assert encode_rle(decode_rle(mask)).rle == mask.rle


class TestFeatureBlob:
    def test_empty_blob(self, tmp_path):
        blob = FeatureBlob([], np.zeros((0, 4), dtype=np.float32))
        path = tmp_path / "f.gsfv"
        write_features(blob, path)
        loaded = load_features(path)
        assert loaded.patch_count == 0
        with pytest.raises(KeyError):
            loaded.row("a", 0)

    def test_byte_length_matches_format_arithmetic(self, tmp_path):
        keys = [("img", 0), ("img", 1), ("img", 2)]
        blob = FeatureBlob(keys, np.ones((3, 4), dtype=np.float32))
        path = tmp_path / "f.gsfv"
        write_features(blob, path)
        # header (4+2+4+4) + 3 index entries (2+3+4) + 3*4*4 matrix bytes
        expected = 14 + 3 * (2 + len("img") + 4) + 3 * 4 * 4
        assert path.stat().st_size == expected == gsfv_byte_length(keys, 4)

    def test_nan_rejected(self):
        with pytest.raises(DatasetError, match="non-finite"):
            FeatureBlob([("a", 0)], np.array([[np.nan]], dtype=np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.gsfv"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(DatasetError, match="magic"):
            load_features(path)

    def test_round_trip_lookup(self, tmp_path):
        rng = np.random.default_rng(0)
        keys = [(f"img{i}", j) for i in range(3) for j in range(5)]
        matrix = rng.normal(size=(15, 6)).astype(np.float32)
        path = tmp_path / "f.gsfv"
        write_features(FeatureBlob(keys, matrix), path)
        loaded = load_features(path)
        for row, key in enumerate(keys):
            assert np.array_equal(loaded.row(*key), matrix[row])
        assert not loaded.has("img9", 0)


class TestSimilarityScores:
    def test_round_trip(self, tmp_path):
        scores = {("a", 0, "wheel"): 0.5, ("a", 1, "wheel"): -0.25}
        path = tmp_path / "scores.csv"
        save_similarity_scores(scores, path)
        assert load_similarity_scores(path) == scores

    def test_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("image_id,patch_index,part_class,score\na,0,wheel,1.5\n")
        with pytest.raises(DatasetError, match="outside"):
            load_similarity_scores(path)
