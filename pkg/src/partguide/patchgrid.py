"""Overlapping square patch grids and patch-level ground-truth labels."""

from dataclasses import dataclass, field

import numpy as np

from .dataset import decode_rle

DEFAULT_DIVISOR = 14
DEFAULT_OVERLAP = 0.5
DEFAULT_COVERAGE_THRESHOLD = 0.25


@dataclass(frozen=True)
class Patch:
    image_id: str
    index: int
    box: tuple  # (x0, y0, x1, y1), half-open pixel coordinates

    @property
    def center(self):
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) // 2, (y0 + y1) // 2)

    def area(self):
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)


@dataclass
class PatchGrid:
    image_id: str
    width: int
    height: int
    patch_size: int
    stride: int
    patches: list = field(default_factory=list)
    degenerate: bool = False

    def __len__(self):
        return len(self.patches)


def _axis_positions(extent, size, stride):
    """Start offsets along one axis; the last patch is clamped to the border."""
    n = (extent - size) // stride + 1
    positions = [i * stride for i in range(n)]
    if positions[-1] + size < extent:
        positions.append(extent - size)
    return positions


def build_grid(image_id, width, height, divisor=DEFAULT_DIVISOR,
               overlap_fraction=DEFAULT_OVERLAP):
    """Tile an image into square patches of size ~min(W,H)/divisor.

    Stride is size*(1-overlap_fraction); the final row/column is clamped so
    patches always touch the image border and every pixel is covered. Images
    smaller than the divisor degrade to a single full-image patch.
    """
    if divisor < 1:
        raise ValueError("divisor must be >= 1")
    if not 0 <= overlap_fraction < 1:
        raise ValueError("overlap_fraction must be in [0, 1)")
    if width < divisor or height < divisor:
        patch = Patch(image_id, 0, (0, 0, width, height))
        return PatchGrid(image_id, width, height, min(width, height),
                         max(width, height), [patch], degenerate=True)

    size = max(1, round(min(width, height) / divisor))
    stride = max(1, round(size * (1.0 - overlap_fraction)))
    xs = _axis_positions(width, size, stride)
    ys = _axis_positions(height, size, stride)
    patches = []
    for y in ys:
        for x in xs:
            patches.append(Patch(image_id, len(patches),
                                 (x, y, x + size, y + size)))
    return PatchGrid(image_id, width, height, size, stride, patches)


@dataclass(frozen=True)
class LabeledPatch:
    patch: Patch
    part_class: str
    label: int  # 1 if the patch contains the part


def label_patches(grid, mask, coverage_threshold=DEFAULT_COVERAGE_THRESHOLD):
    """Label each patch 1 iff mask pixels cover >= coverage_threshold of it."""
    if (mask.width, mask.height) != (grid.width, grid.height):
        raise ValueError(
            f"mask is {mask.width}x{mask.height}, grid expects "
            f"{grid.width}x{grid.height}"
        )
    pixels = decode_rle(mask)
    labeled = []
    for patch in grid.patches:
        x0, y0, x1, y1 = patch.box
        covered = int(np.count_nonzero(pixels[y0:y1, x0:x1]))
        label = 1 if covered / patch.area() >= coverage_threshold else 0
        labeled.append(LabeledPatch(patch, mask.part_class, label))
    return labeled
