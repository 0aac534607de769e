"""IoU metrics, variant tables, model fusion/selection and label-efficiency
experiments.

Pooled IoU (intersections and unions summed over an image set before
dividing) is the headline metric; per-image macro averages are reported
alongside. Empty-vs-empty pairs count as IoU 1.0, empty-vs-nonempty as 0.0.
"""

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dataset import decode_rle
from .guidance import ROI_VARIANTS, Variant


def iou(pred, gt):
    """Intersection-over-union of two SegmentMasks of equal dimensions."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"mask dimensions differ: {pred.width}x{pred.height} vs "
            f"{gt.width}x{gt.height}"
        )
    a = decode_rle(pred)
    b = decode_rle(gt)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def pooled_iou(pairs):
    """IoU with intersections and unions summed over (pred, gt) pairs."""
    inter = 0
    union = 0
    for pred, gt in pairs:
        if (pred.width, pred.height) != (gt.width, gt.height):
            raise ValueError("mask dimensions differ within pooled set")
        a = decode_rle(pred)
        b = decode_rle(gt)
        inter += int(np.count_nonzero(a & b))
        union += int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return inter / union


@dataclass
class IoUReport:
    part_classes: list
    variants: list  # column labels (str)
    cells: dict  # (part_class, variant) -> float
    per_image: dict = field(default_factory=dict)  # optional breakdown
    notes: list = field(default_factory=list)

    def column_average(self, variant):
        return float(np.mean([self.cells[(p, variant)]
                              for p in self.part_classes]))

    def row_best(self, part_class):
        return max(self.variants,
                   key=lambda v: (self.cells[(part_class, v)],
                                  -self.variants.index(v)))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["part_class"] + list(self.variants))
        for part in self.part_classes:
            writer.writerow([part] + [f"{self.cells[(part, v)]:.6f}"
                                      for v in self.variants])
        writer.writerow(["average"] + [f"{self.column_average(v):.6f}"
                                       for v in self.variants])
        return buf.getvalue()

    def to_text(self):
        width = max(len(p) for p in self.part_classes + ["average"]) + 2
        lines = ["".ljust(width) + "".join(v.rjust(14) for v in self.variants)]
        for part in self.part_classes:
            best = self.row_best(part)
            row = part.ljust(width)
            for v in self.variants:
                value = f"{self.cells[(part, v)]:.3f}"
                if v == best:
                    value = f"*{value}"
                row += value.rjust(14)
            lines.append(row)
        lines.append("average".ljust(width) +
                     "".join(f"{self.column_average(v):.3f}".rjust(14)
                             for v in self.variants))
        lines.extend(f"# {note}" for note in self.notes)
        return "\n".join(lines) + "\n"


def variant_table(cells, part_classes=None, variants=None):
    """Build an IoUReport from a {(part, variant): iou} mapping.

    Every (part, variant) cell must be present.
    """
    if part_classes is None:
        part_classes = sorted({p for p, _ in cells})
    if variants is None:
        variants = sorted({v for _, v in cells})
    for part in part_classes:
        for variant in variants:
            if (part, variant) not in cells:
                raise KeyError(f"missing cell ({part!r}, {variant!r})")
    table = {(p, v): float(cells[(p, v)]) for p in part_classes
             for v in variants}
    return IoUReport(list(part_classes), list(variants), table)


def bundled_fixture(name):
    """Path to a fixture table shipped with the package.

    Known names: "variant_table" (per-part IoU of the six model variants)
    and "threshold_sweep" (per-part IoU across confidence thresholds).
    """
    from importlib.resources import files
    return files("partguide.data") / f"{name}.csv"


def load_fixture_table(path):
    """Read a variant table from CSV (part_class column + one per variant).

    An 'average' row, if present, is dropped and recomputed.
    """
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        variants = [name for name in reader.fieldnames if name != "part_class"]
        cells = {}
        part_classes = []
        for row in reader:
            part = row["part_class"]
            if part.lower() == "average":
                continue
            part_classes.append(part)
            for variant in variants:
                cells[(part, variant)] = float(row[variant])
    return variant_table(cells, part_classes, variants)


@dataclass
class FusionSelection:
    chosen: dict  # part_class -> variant label
    average_iou: float
    lower_bound: float
    upper_bound: float
    sample_size: int = 0
    seeds: list = field(default_factory=list)


def fuse_best_per_part(report, variants=None):
    """Pick the best variant per part on the full table and average the picks."""
    variants = list(variants) if variants is not None else list(report.variants)
    chosen = {}
    picked = []
    worst = []
    for part in report.part_classes:
        best = max(variants, key=lambda v: (report.cells[(part, v)],
                                            -variants.index(v)))
        chosen[part] = best
        picked.append(report.cells[(part, best)])
        worst.append(min(report.cells[(part, v)] for v in variants))
    return FusionSelection(chosen, float(np.mean(picked)),
                           float(np.mean(worst)), float(np.mean(picked)))


def _select_on_sample(per_image, part_classes, variants, image_ids):
    """Per-part argmax variant from pooled IoU over the sampled images only.

    Ties go to the variant earliest in the declared order.
    """
    chosen = {}
    for part in part_classes:
        best_variant, best_value = None, -1.0
        for variant in variants:
            values = [per_image[(img, part, variant)] for img in image_ids]
            value = float(np.mean(values))
            if value > best_value + 1e-12:
                best_variant, best_value = variant, value
        chosen[part] = best_variant
    return chosen


def _full_set_score(per_image, part_classes, images, chosen):
    per_part = []
    for part in part_classes:
        values = [per_image[(img, part, chosen[part])] for img in images]
        per_part.append(float(np.mean(values)))
    return float(np.mean(per_part))


def selection_experiment(per_image, images, part_classes, variants,
                         sample_sizes=(1, 2, 4, 8, 16, 32, 64),
                         repetitions=10, seed=0):
    """Model-selection-from-few-images experiment.

    per_image: (image_id, part_class, variant) -> IoU. For each sample size
    n, repeat: draw n images without replacement, pick per-part argmax
    variant on the sample, score the picks on the full set. Returns a list
    of rows {n, mean, std, values, lower, upper}.

    The experiment evaluates selections on the full set (sampled images
    included); results at small n therefore carry a selection-leakage
    caveat, noted in report output.
    """
    images = list(images)
    full_best = _select_on_sample(per_image, part_classes, variants, images)
    upper = _full_set_score(per_image, part_classes, images, full_best)
    worst = {}
    for part in part_classes:
        worst[part] = min(
            variants,
            key=lambda v: (float(np.mean([per_image[(img, part, v)]
                                          for img in images])),
                           variants.index(v)))
    lower = _full_set_score(per_image, part_classes, images, worst)

    rows = []
    for n in sample_sizes:
        if n > len(images):
            raise ValueError(f"sample size {n} exceeds image count {len(images)}")
        values = []
        for rep in range(repetitions):
            rng = np.random.default_rng(seed + rep)
            sample = list(rng.choice(len(images), size=n, replace=False))
            sample_ids = [images[i] for i in sample]
            chosen = _select_on_sample(per_image, part_classes, variants,
                                       sample_ids)
            values.append(_full_set_score(per_image, part_classes, images,
                                          chosen))
        spread = float(np.std(values)) if len(set(values)) > 1 else 0.0
        rows.append({"n": n, "mean": float(np.mean(values)),
                     "std": spread, "values": values,
                     "lower": lower, "upper": upper})
    return rows


def exhaustive_selection_mean(per_image, images, part_classes, variants, n):
    """Expected full-set score over all C(len(images), n) samples.

    Oracle counterpart of selection_experiment for small fixtures.
    """
    images = list(images)
    values = []
    for sample in combinations(images, n):
        chosen = _select_on_sample(per_image, part_classes, variants,
                                   list(sample))
        values.append(_full_set_score(per_image, part_classes, images, chosen))
    return float(np.mean(values))


def threshold_sweep(scored_predictions, ground_truth, part_classes,
                    thresholds):
    """Per-part pooled IoU at each confidence threshold.

    scored_predictions: (image_id, part_class) -> list of (confidence, mask).
    The prediction at a threshold is the union of masks with confidence
    strictly above it. Returns an IoUReport with one column per threshold;
    the best-average column is noted.
    """
    if not thresholds:
        raise ValueError("empty threshold list")
    cells = {}
    images = sorted({img for img, _ in ground_truth})
    for threshold in thresholds:
        label = f"{threshold:g}"
        for part in part_classes:
            pairs = []
            for img in images:
                gt = ground_truth[(img, part)]
                union = np.zeros((gt.height, gt.width), dtype=bool)
                for confidence, mask in scored_predictions.get((img, part), []):
                    if confidence > threshold:
                        union |= decode_rle(mask)
                from .dataset import encode_rle
                pairs.append((encode_rle(union, img, part), gt))
            cells[(part, label)] = pooled_iou(pairs)
    labels = [f"{t:g}" for t in thresholds]
    report = variant_table(cells, part_classes, labels)
    best = max(labels, key=lambda l: (report.column_average(l),
                                      -labels.index(l)))
    report.notes.append(f"best average at threshold {best}")
    return report


def label_efficiency_curve(run_for_size, sizes=(1, 2, 4, 8, 16, 32, 64),
                           repetitions=3, seed=0):
    """Learning curves: IoU per variant (and fused) vs training-set size.

    run_for_size(size, seed) must train on `size` sampled images and return
    a dict variant-label -> full-evaluation IoU (including a "fused" entry).
    Returns rows {size, variant, mean, std, values}.
    """
    if any(s < 1 for s in sizes):
        raise ValueError("training sizes must be >= 1")
    results = {}
    for size in sizes:
        per_variant = {}
        for rep in range(repetitions):
            scores = run_for_size(size, seed + rep)
            for variant, value in scores.items():
                per_variant.setdefault(variant, []).append(value)
        for variant, values in per_variant.items():
            results[(size, variant)] = values
    rows = []
    for (size, variant), values in sorted(results.items(),
                                          key=lambda kv: (kv[0][0], kv[0][1])):
        rows.append({"size": size, "variant": variant,
                     "mean": float(np.mean(values)),
                     "std": float(np.std(values)), "values": values})
    return rows


def roi_variant_labels():
    """Declared ROI variant order used for fusion tie-breaking."""
    return [v.value for v in ROI_VARIANTS]


def curve_rows_to_csv(rows, columns, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
