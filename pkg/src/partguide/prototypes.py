"""Prototype clustering, ranking and annotation click simulation.

Prototypes group visually similar patches so a whole group can be labeled
with one bulk click plus per-patch exceptions. Clustering is seeded k-means
over L2-normalized imported features.
"""

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_K = 128
KMEANS_MAX_ITER = 25
KMEANS_REL_TOL = 1e-4


@dataclass
class Prototype:
    id: int
    centroid: np.ndarray
    members: list  # of (image_id, patch_index)
    score_per_class: dict = field(default_factory=dict)


@dataclass
class AnnotationRecord:
    prototype_id: int
    part_class: str
    bulk_label: int
    exceptions: list  # member indices within the prototype's member list
    clicks: int
    source: str = "simulated"  # or "human"
    annotator: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if self.clicks != 1 + len(self.exceptions):
            raise ValueError("clicks must equal 1 + number of exceptions")

    def member_labels(self, prototype):
        """Expand bulk label + exceptions to per-member (key, label) pairs."""
        exceptions = set(self.exceptions)
        flipped = 1 - self.bulk_label
        return [(key, flipped if i in exceptions else self.bulk_label)
                for i, key in enumerate(prototype.members)]

    def to_json(self):
        return {"prototype_id": self.prototype_id, "part_class": self.part_class,
                "bulk_label": self.bulk_label, "exceptions": list(self.exceptions),
                "clicks": self.clicks, "source": self.source,
                "annotator": self.annotator, "timestamp": self.timestamp}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["prototype_id"]), obj["part_class"],
                   int(obj["bulk_label"]), [int(i) for i in obj["exceptions"]],
                   int(obj["clicks"]), obj.get("source", "simulated"),
                   obj.get("annotator", ""), obj.get("timestamp", ""))


def _normalize_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def cluster_prototypes(features, k, seed=0):
    """Seeded k-means over L2-normalized features from a FeatureBlob.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid, so exactly k non-empty prototypes come out.
    """
    n = features.patch_count
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds patch count {n}")

    data = _normalize_rows(features.matrix.astype(np.float64))
    rng = np.random.default_rng(seed)
    centroids = data[rng.choice(n, size=k, replace=False)].copy()

    assignment = np.zeros(n, dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        # squared distances via the expansion ||x||^2 - 2 x.c + ||c||^2
        dist = (
            np.sum(data ** 2, axis=1)[:, None]
            - 2.0 * data @ centroids.T
            + np.sum(centroids ** 2, axis=1)[None, :]
        )
        assignment = np.argmin(dist, axis=1)
        new_centroids = np.empty_like(centroids)
        for c in range(k):
            mask = assignment == c
            if not mask.any():
                farthest = int(np.argmax(dist[np.arange(n), assignment]))
                new_centroids[c] = data[farthest]
                assignment[farthest] = c
            else:
                new_centroids[c] = data[mask].mean(axis=0)
        shift = np.linalg.norm(new_centroids - centroids)
        scale = np.linalg.norm(centroids) or 1.0
        centroids = new_centroids
        if shift / scale < KMEANS_REL_TOL:
            break

    # final assignment against the converged centroids
    dist = (
        np.sum(data ** 2, axis=1)[:, None]
        - 2.0 * data @ centroids.T
        + np.sum(centroids ** 2, axis=1)[None, :]
    )
    assignment = np.argmin(dist, axis=1)
    for c in range(k):
        if not (assignment == c).any():
            order = np.argsort(-dist[np.arange(n), assignment])
            for candidate in order:
                current = assignment[candidate]
                if (assignment == current).sum() > 1:
                    assignment[candidate] = c
                    centroids[c] = data[candidate]
                    break

    prototypes = []
    for c in range(k):
        member_rows = np.flatnonzero(assignment == c)
        members = [features.keys[i] for i in member_rows]
        prototypes.append(Prototype(c, centroids[c], members))
    return prototypes


def score_prototypes(prototypes, similarity_scores, part_classes):
    """Attach per-class scores: mean of member patch similarity scores."""
    for proto in prototypes:
        for part_class in part_classes:
            values = []
            for image_id, patch_index in proto.members:
                key = (image_id, patch_index, part_class)
                if key in similarity_scores:
                    values.append(similarity_scores[key])
            if values:
                proto.score_per_class[part_class] = float(np.mean(values))
    return prototypes


def rank_prototypes(prototypes, part_class):
    """Sort by descending class score; ties broken by ascending prototype id."""
    missing = [p.id for p in prototypes if part_class not in p.score_per_class]
    if missing:
        raise KeyError(f"no {part_class!r} score for prototypes {missing}")
    return sorted(prototypes,
                  key=lambda p: (-p.score_per_class[part_class], p.id))


def simulate_annotation(prototype, ground_truth, part_class):
    """Simulate the bulk-click annotation of one prototype.

    ground_truth maps (image_id, patch_index) -> 0/1 for the part class.
    The bulk click takes the majority label, the minority members become
    exceptions: clicks = 1 + min(#pos, #neg).
    """
    labels = []
    for key in prototype.members:
        if key not in ground_truth:
            raise KeyError(f"no ground-truth label for member {key}")
        labels.append(int(ground_truth[key]))
    positives = sum(labels)
    negatives = len(labels) - positives
    bulk = 1 if positives >= negatives else 0
    exceptions = [i for i, label in enumerate(labels) if label != bulk]
    return AnnotationRecord(prototype.id, part_class, bulk, exceptions,
                            1 + len(exceptions), source="simulated")


def records_to_dataset(records, prototypes, features):
    """Turn annotation records into (feature matrix, labels) training data.

    Later records win for a (prototype, part) pair; patches appearing in
    several prototypes keep the label of the last record touching them.
    """
    by_key = {}
    proto_by_id = {p.id: p for p in prototypes}
    latest = {}
    for record in records:
        latest[(record.prototype_id, record.part_class)] = record
    for record in latest.values():
        proto = proto_by_id[record.prototype_id]
        for key, label in record.member_labels(proto):
            by_key[key] = label
    keys = sorted(by_key)
    matrix = np.stack([features.row(*key) for key in keys]) if keys else \
        np.zeros((0, features.dim))
    labels = np.array([by_key[key] for key in keys], dtype=int)
    return keys, matrix, labels


def retrieval_efficacy(patch_scores, prototypes, ground_truth, k):
    """Precision@k of raw patch-score ranking vs prototype-mean ranking.

    patch_scores: dict (image_id, patch_index) -> score. The prototype
    ranking enumerates members of prototypes ordered by mean member score.
    Returns (raw_precision, prototype_precision).
    """
    universe = sorted(patch_scores)
    if k > len(universe):
        raise ValueError(f"k={k} exceeds universe size {len(universe)}")

    raw_order = sorted(universe, key=lambda key: (-patch_scores[key], key))
    raw_top = raw_order[:k]
    raw_precision = sum(ground_truth[key] for key in raw_top) / k

    def proto_mean(proto):
        return float(np.mean([patch_scores[key] for key in proto.members]))

    proto_order = sorted(prototypes, key=lambda p: (-proto_mean(p), p.id))
    proto_top = []
    for proto in proto_order:
        for key in sorted(proto.members, key=lambda m: (-patch_scores[m], m)):
            if len(proto_top) < k:
                proto_top.append(key)
        if len(proto_top) >= k:
            break
    proto_precision = sum(ground_truth[key] for key in proto_top) / k
    return raw_precision, proto_precision


def annotation_cost_comparison(records_per_class, polygon_vertex_counts,
                               images_per_class):
    """Mean clicks/image for the patch strategy vs polygon annotation.

    records_per_class: part class -> list of AnnotationRecord.
    polygon_vertex_counts: part class -> total polygon vertices (clicks).
    images_per_class: part class -> number of annotated images.
    Returns rows {class, patch_clicks_per_image, polygon_clicks_per_image, ratio}.
    """
    table = []
    for part_class, records in sorted(records_per_class.items()):
        n_images = images_per_class[part_class]
        if n_images == 0:
            raise ValueError(f"class {part_class!r} has zero images")
        patch_clicks = sum(r.clicks for r in records) / n_images
        polygon_clicks = polygon_vertex_counts[part_class] / n_images
        ratio = polygon_clicks / patch_clicks if patch_clicks else float("inf")
        table.append({"part_class": part_class,
                      "patch_clicks_per_image": patch_clicks,
                      "polygon_clicks_per_image": polygon_clicks,
                      "ratio": ratio})
    return table


def approximate_polygon_vertices(mask_grid):
    """Estimate polygon vertex count of a mask by contour direction changes.

    Used when only masks (no polygon metadata) exist; flagged approximate by
    callers. Counts corner transitions on the boundary of the largest sense:
    a vertex is a boundary cell where the outline changes direction.
    """
    grid = np.asarray(mask_grid, dtype=bool)
    if not grid.any():
        return 0
    padded = np.pad(grid.astype(np.int8), 1)
    # count convex + concave corners of the pixel outline; for a rectilinear
    # polygon the number of corners equals the number of vertices
    a = padded[:-1, :-1]
    b = padded[:-1, 1:]
    c = padded[1:, :-1]
    d = padded[1:, 1:]
    s = a + b + c + d
    corners = int(np.count_nonzero(s == 1) + np.count_nonzero(s == 3))
    diagonal = np.count_nonzero((a == d) & (b == c) & (a != b))
    return corners + 2 * int(diagonal)


def save_prototypes(prototypes, path):
    payload = [{"id": p.id, "centroid": [float(v) for v in p.centroid],
                "members": [[image_id, patch_index]
                            for image_id, patch_index in p.members],
                "score_per_class": p.score_per_class}
               for p in prototypes]
    with open(path, "w") as f:
        json.dump(payload, f)


def load_prototypes(path):
    with open(path) as f:
        payload = json.load(f)
    return [Prototype(int(p["id"]), np.array(p["centroid"]),
                      [(m[0], int(m[1])) for m in p["members"]],
                      dict(p.get("score_per_class", {})))
            for p in payload]


def save_records(records, path):
    with open(path, "a") as f:
        for record in records:
            f.write(json.dumps(record.to_json()) + "\n")


def load_records(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(AnnotationRecord.from_json(json.loads(line)))
    return records
