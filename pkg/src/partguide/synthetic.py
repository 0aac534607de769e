"""Synthetic desk-scale benchmark: geometric parts with informative noisy
features, so the whole pipeline can be exercised without any foundation
model.

Each image carries three parts in separate horizontal bands (a block, a
disk and a bar). Patch features encode per-class coverage plus Gaussian
noise; similarity scores are noisy coverage values standing in for imported
visual-textual scores.
"""

import json
from pathlib import Path

import numpy as np

from .dataset import (FeatureBlob, SegmentMask, encode_rle, save_mask,
                      save_similarity_scores, write_features)
from .patchgrid import build_grid

PART_CLASSES = ["block", "disk", "bar"]
IMAGE_SIZE = 112
FEATURE_DIM = 8
SIGNAL_SCALE = 2.0
FEATURE_NOISE = 0.3
SCORE_NOISE = 0.05


def _paint_parts(rng):
    """Random placement of the three parts; returns class -> boolean grid."""
    masks = {}
    grid_y, grid_x = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]

    bw, bh = 32, 24
    x0 = int(rng.integers(0, IMAGE_SIZE - bw))
    y0 = int(rng.integers(4, 36 - bh + 1))
    block = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    block[y0:y0 + bh, x0:x0 + bw] = True
    masks["block"] = block

    radius = 12
    cx = int(rng.integers(radius, IMAGE_SIZE - radius))
    cy = int(rng.integers(38 + radius, 74 - radius + 1))
    masks["disk"] = (grid_x - cx) ** 2 + (grid_y - cy) ** 2 <= radius ** 2

    bw, bh = 48, 10
    x0 = int(rng.integers(0, IMAGE_SIZE - bw))
    y0 = int(rng.integers(78, 106 - bh + 1))
    bar = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    bar[y0:y0 + bh, x0:x0 + bw] = True
    masks["bar"] = bar
    return masks


def _patch_coverage(box, mask):
    x0, y0, x1, y1 = box
    return float(np.count_nonzero(mask[y0:y1, x0:x1])) / ((x1 - x0) * (y1 - y0))


class SyntheticBenchmark:
    """In-memory benchmark: grids, masks, features and similarity scores."""

    def __init__(self, n_images=64, seed=0, divisor=14, overlap=0.5):
        rng = np.random.default_rng(seed)
        self.part_classes = list(PART_CLASSES)
        self.image_ids = [f"img{i:03d}" for i in range(n_images)]
        self.grids = {}
        self.masks = {}  # (image_id, part_class) -> SegmentMask
        self.scores = {}  # (image_id, patch_index, part_class) -> score
        keys = []
        rows = []
        for image_id in self.image_ids:
            grid = build_grid(image_id, IMAGE_SIZE, IMAGE_SIZE, divisor, overlap)
            self.grids[image_id] = grid
            painted = _paint_parts(rng)
            for part, pixels in painted.items():
                self.masks[(image_id, part)] = encode_rle(pixels, image_id, part)
            for patch in grid.patches:
                coverage = [_patch_coverage(patch.box, painted[p])
                            for p in self.part_classes]
                feature = np.zeros(FEATURE_DIM)
                feature[:len(coverage)] = np.asarray(coverage) * SIGNAL_SCALE
                feature += rng.normal(0.0, FEATURE_NOISE, FEATURE_DIM)
                keys.append((image_id, patch.index))
                rows.append(feature)
                for part, cov in zip(self.part_classes, coverage):
                    noisy = cov + rng.normal(0.0, SCORE_NOISE)
                    self.scores[(image_id, patch.index, part)] = float(
                        np.clip(noisy, -1.0, 1.0))
        self.features = FeatureBlob(keys, np.asarray(rows, dtype=np.float32))

    def write(self, directory):
        """Materialize the benchmark as an on-disk workspace."""
        directory = Path(directory)
        (directory / "masks").mkdir(parents=True, exist_ok=True)
        entries = []
        for image_id in self.image_ids:
            mask_sources = {}
            for part in self.part_classes:
                name = f"masks/{image_id}_{part}.json"
                save_mask(self.masks[(image_id, part)], directory / name)
                mask_sources[part] = name
            entries.append({"id": image_id, "width": IMAGE_SIZE,
                            "height": IMAGE_SIZE, "pixel_source": "",
                            "mask_sources": mask_sources})
        manifest = {"dataset_id": "synthetic", "images": entries,
                    "part_classes": self.part_classes, "merge_table": {}}
        with open(directory / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2)
        write_features(self.features, directory / "features.gsfv")
        save_similarity_scores(self.scores, directory / "scores.csv")
        return directory / "manifest.json"
