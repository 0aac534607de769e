"""ROI construction, positional prompts, variant dispatch and segmentation
backends.

Confident patches are grouped into connected components by positive box
overlap; each component becomes an ROI with a variant-dependent prompt.
Backends speak a small JSON protocol (requests carry the ROI and prompt,
responses carry an ROI-local RLE mask) so any external segmenter can plug in.
"""

import json
import subprocess
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dataset import SegmentMask, decode_rle, encode_rle

DEFAULT_CONFIDENCE_THRESHOLD = 0.5


class Variant(Enum):
    LGSAM = "lgsam"  # ROI, prompt at max-confidence patch center
    CGSAM = "cgsam"  # ROI, prompt at ROI center
    GGSAM = "ggsam"  # ROI, text prompt, grounded segmenter
    PATCH_NAIVE = "patch-naive"  # per-patch ROI, box filled as the mask
    PATCH_GGSAM = "patch-ggsam"  # per-patch ROI, text prompt
    PATCH_CGSAM = "patch-cgsam"  # per-patch ROI, prompt at patch center

    @property
    def roi_family(self):
        return self in (Variant.LGSAM, Variant.CGSAM, Variant.GGSAM)

    @property
    def uses_point_prompt(self):
        return self in (Variant.LGSAM, Variant.CGSAM, Variant.PATCH_CGSAM)

    @property
    def uses_text_prompt(self):
        return self in (Variant.GGSAM, Variant.PATCH_GGSAM)


ROI_VARIANTS = (Variant.GGSAM, Variant.CGSAM, Variant.LGSAM)


@dataclass
class PromptedRegion:
    roi: tuple  # (x0, y0, x1, y1) pixel box
    member_patches: list  # patch indices
    peak_confidence: float
    prompt: tuple = None  # (x, y) or None

    def __post_init__(self):
        if not self.member_patches:
            raise ValueError("region must have at least one member patch")
        if self.prompt is not None:
            x, y = self.prompt
            x0, y0, x1, y1 = self.roi
            if not (x0 <= x < x1 and y0 <= y < y1):
                raise ValueError(f"prompt {self.prompt} outside roi {self.roi}")


def threshold_patches(confidences, threshold):
    """Select patch indices with confidence strictly above the threshold."""
    return {p for p, c in confidences.items() if c > threshold}


def _boxes_overlap(a, b):
    """True iff the boxes share positive intersection area (not just a corner)."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return min(ax1, bx1) > max(ax0, bx0) and min(ay1, by1) > max(ay0, by0)


def group_rois(patches, selected=None):
    """Group selected patches into ROIs by connected box overlap.

    patches: dict patch index -> box. Returns regions ordered by (x0, y0),
    each being the min/max bounding box of one overlap component. Prompts
    and confidences are left unset.
    """
    if selected is None:
        selected = set(patches)
    indices = sorted(selected)
    parent = {p: p for p in indices}

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    for a_pos, a in enumerate(indices):
        for b in indices[a_pos + 1:]:
            if _boxes_overlap(patches[a], patches[b]):
                parent[find(a)] = find(b)

    components = {}
    for p in indices:
        components.setdefault(find(p), []).append(p)

    regions = []
    for members in components.values():
        boxes = [patches[p] for p in members]
        roi = (min(b[0] for b in boxes), min(b[1] for b in boxes),
               max(b[2] for b in boxes), max(b[3] for b in boxes))
        regions.append(PromptedRegion(roi, sorted(members), 0.0))
    regions.sort(key=lambda r: (r.roi[0], r.roi[1], r.roi[2], r.roi[3]))
    return regions


def infer_prompt(region, patches, confidences, mode):
    """Attach the positional prompt for a region.

    mode "likelihood": center of the highest-confidence member patch, ties
    broken by lowest patch index. mode "center": integer-floor center of
    the ROI box.
    """
    if mode == "likelihood":
        best = None
        for p in region.member_patches:
            if p not in confidences:
                raise KeyError(f"no confidence for member patch {p}")
            if best is None or confidences[p] > confidences[best]:
                best = p
        x0, y0, x1, y1 = patches[best]
        prompt = ((x0 + x1) // 2, (y0 + y1) // 2)
    elif mode == "center":
        x0, y0, x1, y1 = region.roi
        prompt = ((x0 + x1) // 2, (y0 + y1) // 2)
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")
    peak = max(confidences[p] for p in region.member_patches)
    return PromptedRegion(region.roi, region.member_patches, peak, prompt)


def run_guidance(grid, features, model, variant,
                 threshold=DEFAULT_CONFIDENCE_THRESHOLD):
    """Produce prompted regions for one image under a model variant.

    ROI-family variants group confident patches and prompt per component;
    patch-family variants emit one region per confident patch. Text-prompt
    variants leave the positional prompt unset (the part class rides in the
    segmentation request instead).
    """
    from .classifier import predict_many

    rows = []
    for patch in grid.patches:
        if not features.has(grid.image_id, patch.index):
            raise KeyError(f"no feature for patch {patch.index} of {grid.image_id}")
        rows.append(features.row(grid.image_id, patch.index))
    confs = predict_many(model, np.stack(rows))
    confidences = {patch.index: float(c) for patch, c in zip(grid.patches, confs)}
    boxes = {patch.index: patch.box for patch in grid.patches}

    selected = threshold_patches(confidences, threshold)
    if not selected:
        return []

    if variant.roi_family:
        regions = group_rois(boxes, selected)
        if variant is Variant.LGSAM:
            regions = [infer_prompt(r, boxes, confidences, "likelihood")
                       for r in regions]
        elif variant is Variant.CGSAM:
            regions = [infer_prompt(r, boxes, confidences, "center")
                       for r in regions]
        else:  # GGSAM: text prompt handled at request time
            regions = [PromptedRegion(r.roi, r.member_patches,
                                      max(confidences[p] for p in r.member_patches))
                       for r in regions]
        return regions

    regions = []
    for p in sorted(selected):
        region = PromptedRegion(boxes[p], [p], confidences[p])
        if variant is Variant.PATCH_CGSAM:
            region = infer_prompt(region, boxes, confidences, "center")
        regions.append(region)
    return regions


# --- segmentation backends -------------------------------------------------

class BackendError(Exception):
    pass


def make_request(region_id, image_id, region, variant, part_class):
    if variant.uses_text_prompt:
        prompt = {"text": part_class}
    elif region.prompt is not None:
        prompt = {"point": [int(region.prompt[0]), int(region.prompt[1])]}
    else:
        prompt = None
    return {"id": region_id, "image_id": image_id,
            "roi": [int(v) for v in region.roi], "prompt": prompt}


class OracleBackend:
    """Returns ground truth clipped to the ROI; bounds pipeline performance."""

    def __init__(self, ground_truth):
        # ground_truth: (image_id, part_class) -> SegmentMask
        self.ground_truth = ground_truth
        self.part_class = None  # set per run

    def segment(self, request):
        x0, y0, x1, y1 = request["roi"]
        mask = self.ground_truth[(request["image_id"], self.part_class)]
        local = decode_rle(mask)[y0:y1, x0:x1]
        rle = encode_rle(local)
        return {"id": request["id"], "rle": [[s, r] for s, r in rle.rle],
                "width": x1 - x0, "height": y1 - y0, "score": 1.0}


class BoxfillBackend:
    """Returns the full ROI as the segment (the no-segmenter baseline)."""

    def segment(self, request):
        x0, y0, x1, y1 = request["roi"]
        w, h = x1 - x0, y1 - y0
        return {"id": request["id"], "rle": [[0, w * h]] if w * h else [],
                "width": w, "height": h, "score": 1.0}


class ExternalBackend:
    """Talks to a user-supplied segmenter over JSON lines on a subprocess,
    or over HTTP POST /segment when given a URL."""

    def __init__(self, command=None, url=None, timeout=30.0):
        if (command is None) == (url is None):
            raise ValueError("exactly one of command or url required")
        self.command = command
        self.url = url
        self.timeout = timeout
        self._proc = None

    def _process(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True)
        return self._proc

    def segment(self, request):
        if self.url is not None:
            import urllib.request
            data = json.dumps(request).encode()
            req = urllib.request.Request(
                self.url.rstrip("/") + "/segment", data=data,
                headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read())
            except Exception as exc:
                raise BackendError(f"segment request failed: {exc}") from exc
        proc = self._process()
        try:
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
            if not line:
                raise BackendError("backend closed the stream")
            return json.loads(line)
        except (OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"backend protocol error: {exc}") from exc


def segment(region, request_id, image_id, variant, part_class, backend,
            image_width, image_height):
    """Segment one region, returning a SegmentMask in image coordinates."""
    x0, y0, x1, y1 = region.roi
    if variant is Variant.PATCH_NAIVE:
        local = np.ones((y1 - y0, x1 - x0), dtype=bool)
    else:
        request = make_request(request_id, image_id, region, variant, part_class)
        response = backend.segment(request)
        w, h = int(response["width"]), int(response["height"])
        if w > x1 - x0 or h > y1 - y0:
            raise BackendError(
                f"response mask {w}x{h} exceeds roi {x1 - x0}x{y1 - y0}")
        local_mask = SegmentMask(image_id, part_class, w, h,
                                 [(int(s), int(r)) for s, r in response["rle"]])
        local = decode_rle(local_mask)
    full = np.zeros((image_height, image_width), dtype=bool)
    full[y0:y0 + local.shape[0], x0:x0 + local.shape[1]] = local
    return encode_rle(full, image_id, part_class)


@dataclass
class RegionFailure:
    region_id: int
    error: str


@dataclass
class PredictionResult:
    mask: SegmentMask
    regions: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def predict_part_mask(grid, features, model, variant, backend, part_class,
                      threshold=DEFAULT_CONFIDENCE_THRESHOLD):
    """Full per-image prediction: guidance, segmentation, pixelwise union.

    Backend failures are recorded per region and the run continues; an empty
    region list yields an empty mask.
    """
    if isinstance(backend, OracleBackend):
        backend.part_class = part_class
    regions = run_guidance(grid, features, model, variant, threshold)
    union = np.zeros((grid.height, grid.width), dtype=bool)
    failures = []
    for region_id, region in enumerate(regions):
        try:
            mask = segment(region, region_id, grid.image_id, variant,
                           part_class, backend, grid.width, grid.height)
        except BackendError as exc:
            failures.append(RegionFailure(region_id, str(exc)))
            continue
        union |= decode_rle(mask)
    return PredictionResult(encode_rle(union, grid.image_id, part_class),
                            regions, failures)
