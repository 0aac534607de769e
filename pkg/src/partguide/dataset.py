"""Dataset ingestion: manifests, RLE masks, feature blobs, similarity scores.

Everything here is plain-file I/O. Images themselves are never decoded; the
core only needs geometry, masks and imported patch features.
"""

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GSFV_MAGIC = b"GSFV"
GSFV_VERSION = 1


class DatasetError(Exception):
    """Raised for malformed manifests, masks or feature blobs."""


@dataclass
class ImageEntry:
    image_id: str
    width: int
    height: int
    pixel_source: str
    mask_sources: dict  # merged part class -> path


@dataclass
class Manifest:
    dataset_id: str
    images: list  # of ImageEntry
    part_classes: list  # ordered merged class names
    merge_table: dict  # raw class -> merged class

    def image(self, image_id):
        for entry in self.images:
            if entry.image_id == image_id:
                return entry
        raise KeyError(image_id)


def merge_class(name, merge_table):
    """Map a raw class name through the merge table (identity if absent)."""
    return merge_table.get(name, name)


def load_manifest(path):
    """Load and validate a manifest JSON file, applying the class merge table.

    The merge table collapses sided classes (e.g. left/right mirror) into one
    combined class; mask entries are re-keyed accordingly. Masks for two raw
    classes merging into the same class are kept as separate entries only if
    their paths differ, otherwise collapsed.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    with open(path) as f:
        raw = json.load(f)

    merge_table = dict(raw.get("merge_table", {}))
    merged_classes = []
    for name in raw["part_classes"]:
        merged = merge_class(name, merge_table)
        if merged not in merged_classes:
            merged_classes.append(merged)

    images = []
    seen = set()
    for img in raw.get("images", []):
        image_id = img["id"]
        if image_id in seen:
            raise DatasetError(f"duplicate image id: {image_id}")
        seen.add(image_id)
        width, height = int(img["width"]), int(img["height"])
        if width <= 0 or height <= 0:
            raise DatasetError(f"non-positive dimensions for image {image_id}")
        mask_sources = {}
        for cls, mask_path in img.get("mask_sources", {}).items():
            merged = merge_class(cls, merge_table)
            if merged not in merged_classes:
                raise DatasetError(
                    f"image {image_id}: mask class {cls!r} (merged: {merged!r}) "
                    f"not in part_classes"
                )
            mask_sources.setdefault(merged, []).append(mask_path)
        images.append(ImageEntry(image_id, width, height,
                                 img.get("pixel_source", ""), mask_sources))

    return Manifest(raw.get("dataset_id", path.stem), images,
                    merged_classes, merge_table)


@dataclass
class SegmentMask:
    """Binary mask in row-major run-length form."""

    image_id: str
    part_class: str
    width: int
    height: int
    rle: list = field(default_factory=list)  # of (start, run)

    def validate(self):
        total = self.width * self.height
        prev_end = 0
        for start, run in self.rle:
            if run <= 0:
                raise DatasetError(f"non-positive run {run}")
            if start < prev_end:
                raise DatasetError(f"overlapping or unsorted run at {start}")
            if start + run > total:
                raise DatasetError(f"run ({start},{run}) exceeds {total} pixels")
            prev_end = start + run

    def popcount(self):
        return sum(run for _, run in self.rle)

    def to_json(self):
        return {"image_id": self.image_id, "class": self.part_class,
                "width": self.width, "height": self.height,
                "rle": [[s, r] for s, r in self.rle]}

    @classmethod
    def from_json(cls, obj):
        mask = cls(obj["image_id"], obj["class"], int(obj["width"]),
                   int(obj["height"]), [(int(s), int(r)) for s, r in obj["rle"]])
        mask.validate()
        return mask


def decode_rle(mask):
    """Decode a SegmentMask to a (height, width) boolean grid."""
    mask.validate()
    flat = np.zeros(mask.width * mask.height, dtype=bool)
    for start, run in mask.rle:
        flat[start:start + run] = True
    return flat.reshape(mask.height, mask.width)


def encode_rle(grid, image_id="", part_class=""):
    """Encode a (height, width) boolean grid into a SegmentMask."""
    grid = np.asarray(grid, dtype=bool)
    height, width = grid.shape
    flat = grid.reshape(-1)
    rle = []
    # transitions of the padded sequence give run starts/ends
    padded = np.concatenate(([False], flat, [False]))
    diff = np.flatnonzero(padded[1:] != padded[:-1])
    for start, end in zip(diff[0::2], diff[1::2]):
        rle.append((int(start), int(end - start)))
    return SegmentMask(image_id, part_class, width, height, rle)


def load_mask(path):
    with open(path) as f:
        return SegmentMask.from_json(json.load(f))


def save_mask(mask, path):
    with open(path, "w") as f:
        json.dump(mask.to_json(), f)


# --- GSFV feature blobs ----------------------------------------------------
#
# Byte layout (little-endian):
#   magic "GSFV" (4) | version u16 | patch_count u32 | dim u32
#   index table: patch_count entries of [id_len u16 | image_id utf-8 | patch_index u32]
#   matrix: patch_count * dim float32, row-major

_HEADER = struct.Struct("<4sHII")


class FeatureBlob:
    """Imported patch feature vectors with constant-time row lookup."""

    def __init__(self, keys, matrix):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or len(keys) != matrix.shape[0]:
            raise DatasetError("index length does not match row count")
        if matrix.size and not np.isfinite(matrix).all():
            raise DatasetError("non-finite feature value")
        self.keys = list(keys)
        self.matrix = matrix
        self._index = {key: i for i, key in enumerate(self.keys)}
        if len(self._index) != len(self.keys):
            raise DatasetError("duplicate (image_id, patch_index) key")

    @property
    def patch_count(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]

    def row(self, image_id, patch_index):
        try:
            return self.matrix[self._index[(image_id, patch_index)]]
        except KeyError:
            raise KeyError(f"no feature for ({image_id!r}, {patch_index})") from None

    def has(self, image_id, patch_index):
        return (image_id, patch_index) in self._index


def gsfv_byte_length(keys, dim):
    """Exact encoded size in bytes for the given index keys and feature dim."""
    n = _HEADER.size
    for image_id, _ in keys:
        n += 2 + len(image_id.encode()) + 4
    n += len(keys) * dim * 4
    return n


def write_features(blob, path):
    with open(path, "wb") as f:
        f.write(_HEADER.pack(GSFV_MAGIC, GSFV_VERSION, blob.patch_count, blob.dim))
        for image_id, patch_index in blob.keys:
            encoded = image_id.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", patch_index))
        f.write(np.ascontiguousarray(blob.matrix, dtype="<f4").tobytes())


def load_features(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"feature blob not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetError("truncated feature blob")
    magic, version, count, dim = _HEADER.unpack_from(data)
    if magic != GSFV_MAGIC:
        raise DatasetError(f"bad magic {magic!r}")
    if version != GSFV_VERSION:
        raise DatasetError(f"unsupported version {version}")
    offset = _HEADER.size
    keys = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        image_id = data[offset:offset + id_len].decode()
        offset += id_len
        (patch_index,) = struct.unpack_from("<I", data, offset)
        offset += 4
        keys.append((image_id, patch_index))
    expected = count * dim * 4
    if len(data) - offset != expected:
        raise DatasetError("matrix size mismatch")
    matrix = np.frombuffer(data, dtype="<f4", count=count * dim,
                           offset=offset).reshape(count, dim)
    return FeatureBlob(keys, matrix.copy())


# --- similarity scores -----------------------------------------------------

def load_similarity_scores(path):
    """Read CLIP-style similarity scores from CSV.

    Returns dict (image_id, patch_index, part_class) -> score in [-1, 1].
    """
    scores = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "patch_index", "part_class", "score"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DatasetError(f"similarity CSV must have columns {sorted(required)}")
        for row in reader:
            score = float(row["score"])
            if not -1.0 <= score <= 1.0:
                raise DatasetError(f"score {score} outside [-1, 1]")
            scores[(row["image_id"], int(row["patch_index"]), row["part_class"])] = score
    return scores


def save_similarity_scores(scores, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "patch_index", "part_class", "score"])
        for (image_id, patch_index, part_class), score in sorted(scores.items()):
            writer.writerow([image_id, patch_index, part_class, repr(score)])
