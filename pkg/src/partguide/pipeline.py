"""End-to-end orchestration: workspaces on disk, per-part training sets,
variant evaluation and the label-efficiency experiment.

A workspace is a directory holding manifest.json, masks/, features.gsfv and
scores.csv; everything the pipeline needs apart from the segmenter backend.
"""

from pathlib import Path

import numpy as np

from . import classifier, evaluation, guidance
from .dataset import load_features, load_manifest, load_mask, \
    load_similarity_scores
from .guidance import OracleBackend, Variant, predict_part_mask
from .patchgrid import DEFAULT_COVERAGE_THRESHOLD, DEFAULT_DIVISOR, \
    DEFAULT_OVERLAP, build_grid, label_patches


class Workspace:
    def __init__(self, manifest_path, divisor=DEFAULT_DIVISOR,
                 overlap=DEFAULT_OVERLAP):
        manifest_path = Path(manifest_path)
        self.root = manifest_path.parent
        self.manifest = load_manifest(manifest_path)
        self.divisor = divisor
        self.overlap = overlap
        self._grids = {}
        self._masks = {}
        self._features = None
        self._scores = None

    @property
    def image_ids(self):
        return [entry.image_id for entry in self.manifest.images]

    @property
    def part_classes(self):
        return self.manifest.part_classes

    def grid(self, image_id):
        if image_id not in self._grids:
            entry = self.manifest.image(image_id)
            self._grids[image_id] = build_grid(
                image_id, entry.width, entry.height, self.divisor, self.overlap)
        return self._grids[image_id]

    def mask(self, image_id, part_class):
        key = (image_id, part_class)
        if key not in self._masks:
            entry = self.manifest.image(image_id)
            paths = entry.mask_sources.get(part_class)
            if not paths:
                raise KeyError(f"no {part_class!r} mask for image {image_id}")
            mask = load_mask(self.root / paths[0])
            for extra in paths[1:]:
                other = load_mask(self.root / extra)
                from .dataset import decode_rle, encode_rle
                merged = decode_rle(mask) | decode_rle(other)
                mask = encode_rle(merged, image_id, part_class)
            self._masks[key] = mask
        return self._masks[key]

    @property
    def features(self):
        if self._features is None:
            self._features = load_features(self.root / "features.gsfv")
        return self._features

    @property
    def scores(self):
        if self._scores is None:
            self._scores = load_similarity_scores(self.root / "scores.csv")
        return self._scores

    def oracle_backend(self):
        masks = {(img, part): self.mask(img, part)
                 for img in self.image_ids for part in self.part_classes}
        return OracleBackend(masks)


def patch_ground_truth(workspace, part_class, image_ids=None,
                       coverage_threshold=DEFAULT_COVERAGE_THRESHOLD):
    """(image_id, patch_index) -> 0/1 for one part over the given images."""
    image_ids = image_ids if image_ids is not None else workspace.image_ids
    labels = {}
    for image_id in image_ids:
        grid = workspace.grid(image_id)
        mask = workspace.mask(image_id, part_class)
        for labeled in label_patches(grid, mask, coverage_threshold):
            labels[(image_id, labeled.patch.index)] = labeled.label
    return labels


def training_set(workspace, part_class, image_ids,
                 coverage_threshold=DEFAULT_COVERAGE_THRESHOLD):
    """Pooled (features, labels) over the training images for one part."""
    labels = patch_ground_truth(workspace, part_class, image_ids,
                                coverage_threshold)
    keys = sorted(labels)
    matrix = np.stack([workspace.features.row(*key) for key in keys])
    target = np.array([labels[key] for key in keys], dtype=int)
    return matrix, target


def train_part_model(workspace, part_class, image_ids, config=None,
                     coverage_threshold=DEFAULT_COVERAGE_THRESHOLD):
    matrix, target = training_set(workspace, part_class, image_ids,
                                  coverage_threshold)
    return classifier.train(matrix, target, part_class, config)


def evaluate_variant(workspace, models, variant, backend, image_ids=None,
                     threshold=guidance.DEFAULT_CONFIDENCE_THRESHOLD):
    """Pooled and per-image IoU per part for one variant.

    models: part_class -> GuidanceModel. Returns (pooled, per_image) where
    pooled maps part_class -> IoU and per_image maps (image_id, part_class)
    -> IoU.
    """
    image_ids = image_ids if image_ids is not None else workspace.image_ids
    pooled = {}
    per_image = {}
    for part, model in models.items():
        pairs = []
        for image_id in image_ids:
            grid = workspace.grid(image_id)
            result = predict_part_mask(grid, workspace.features, model,
                                       variant, backend, part, threshold)
            gt = workspace.mask(image_id, part)
            pairs.append((result.mask, gt))
            per_image[(image_id, part)] = evaluation.iou(result.mask, gt)
        pooled[part] = evaluation.pooled_iou(pairs)
    return pooled, per_image


def evaluate_variants(workspace, models, variants, backend, image_ids=None,
                      threshold=guidance.DEFAULT_CONFIDENCE_THRESHOLD):
    """IoUReport over variants plus the per-image score matrix."""
    cells = {}
    per_image = {}
    for variant in variants:
        pooled, images = evaluate_variant(workspace, models, variant, backend,
                                          image_ids, threshold)
        for part, value in pooled.items():
            cells[(part, variant.value)] = value
        for (image_id, part), value in images.items():
            per_image[(image_id, part, variant.value)] = value
    report = evaluation.variant_table(
        cells, list(models), [v.value for v in variants])
    return report, per_image


def label_efficiency_run(workspace, variants, backend, size, seed,
                         eval_image_ids=None, config=None,
                         threshold=guidance.DEFAULT_CONFIDENCE_THRESHOLD):
    """One repetition of the learning-curve experiment at one training size.

    Samples `size` training images, trains one model per part, evaluates
    every variant plus per-part fusion on the evaluation set. Returns
    variant-label -> average IoU over parts.
    """
    rng = np.random.default_rng(seed)
    all_ids = workspace.image_ids
    if size > len(all_ids):
        raise ValueError(f"size {size} exceeds image count {len(all_ids)}")
    train_ids = [all_ids[i] for i in
                 rng.choice(len(all_ids), size=size, replace=False)]
    eval_ids = eval_image_ids if eval_image_ids is not None else all_ids

    models = {}
    for part in workspace.part_classes:
        try:
            models[part] = train_part_model(workspace, part, train_ids, config)
        except classifier.TrainingError:
            continue  # single-class sample at tiny sizes: skip the part
    if not models:
        return {v.value: 0.0 for v in variants} | {"fused": 0.0}

    report, _ = evaluate_variants(workspace, models, variants, backend,
                                  eval_ids, threshold)
    scores = {label: report.column_average(label) for label in report.variants}
    fusion = evaluation.fuse_best_per_part(report)
    scores["fused"] = fusion.average_iou
    return scores
