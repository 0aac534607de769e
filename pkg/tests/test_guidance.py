import numpy as np
import pytest

from partguide.dataset import FeatureBlob, SegmentMask, decode_rle, encode_rle
from partguide.guidance import (BackendError, BoxfillBackend, OracleBackend,
                                PromptedRegion, Variant, group_rois,
                                infer_prompt, make_request,
                                predict_part_mask, run_guidance, segment,
                                threshold_patches)
from partguide.patchgrid import build_grid


def brute_force_components(boxes):
    """O(n^2) transitive-closure reachability oracle over box overlap."""
    ids = sorted(boxes)
    n = len(ids)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, i] = True
        for j in range(n):
            a, b = boxes[ids[i]], boxes[ids[j]]
            if (min(a[2], b[2]) > max(a[0], b[0]) and
                    min(a[3], b[3]) > max(a[1], b[1])):
                adj[i, j] = True
    # transitive closure
    for k in range(n):
        for i in range(n):
            if adj[i, k]:
                adj[i] |= adj[k]
    seen = set()
    components = []
    for i in range(n):
        if i in seen:
            continue
        comp = {j for j in range(n) if adj[i, j] and adj[j, i]}
        # symmetric closure: overlap graph is undirected, reachability too
        comp = {j for j in range(n) if adj[i, j]}
        seen |= comp
        components.append(sorted(ids[j] for j in comp))
    return sorted(components)


class TestThreshold:
    def test_threshold_one_empty(self):
        assert threshold_patches({0: 0.9, 1: 1.0}, 1.0) == set()

    def test_threshold_zero_all(self):
        assert threshold_patches({0: 0.1, 1: 0.9}, 0.0) == {0, 1}

    def test_strict_boundary(self):
        assert threshold_patches({0: 0.5, 1: 0.51}, 0.5) == {1}


class TestGroupRois:
    def test_single_patch(self):
        regions = group_rois({0: (2, 2, 6, 6)})
        assert len(regions) == 1
        assert regions[0].roi == (2, 2, 6, 6)

    def test_two_disjoint(self):
        regions = group_rois({0: (0, 0, 4, 4), 1: (10, 10, 14, 14)})
        assert len(regions) == 2

    def test_corner_touch_does_not_connect(self):
        regions = group_rois({0: (0, 0, 4, 4), 1: (4, 4, 8, 8)})
        assert len(regions) == 2

    def test_edge_touch_does_not_connect(self):
        regions = group_rois({0: (0, 0, 4, 4), 1: (4, 0, 8, 4)})
        assert len(regions) == 2

    def test_chain_matches_reachability_oracle(self):
        boxes = {0: (0, 0, 5, 5), 1: (4, 0, 9, 5), 2: (8, 0, 13, 5),
                 3: (20, 0, 25, 5), 4: (24, 0, 29, 5),
                 5: (0, 20, 5, 25), 6: (2, 22, 7, 27),
                 7: (40, 40, 45, 45), 8: (44, 44, 49, 49)}
        regions = group_rois(boxes)
        found = sorted(r.member_patches for r in regions)
        assert found == brute_force_components(boxes)
        for region in regions:
            xs0, ys0, xs1, ys1 = zip(*(boxes[p] for p in region.member_patches))
            assert region.roi == (min(xs0), min(ys0), max(xs1), max(ys1))

    @pytest.mark.parametrize("seed", range(20))
    def test_random_boxes_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 17))
        boxes = {}
        for i in range(n):
            x0 = int(rng.integers(0, 40))
            y0 = int(rng.integers(0, 40))
            boxes[i] = (x0, y0, x0 + int(rng.integers(2, 10)),
                        y0 + int(rng.integers(2, 10)))
        regions = group_rois(boxes)
        assert sorted(r.member_patches for r in regions) == \
            brute_force_components(boxes)
        # partition: every patch exactly once
        all_members = [p for r in regions for p in r.member_patches]
        assert sorted(all_members) == sorted(boxes)

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        boxes = {i: (int(x), int(y), int(x) + 6, int(y) + 6)
                 for i, (x, y) in enumerate(rng.integers(0, 30, size=(10, 2)))}
        a = group_rois(boxes, set(boxes))
        b = group_rois(boxes, set(reversed(sorted(boxes))))
        assert [r.roi for r in a] == [r.roi for r in b]

    def test_empty_input(self):
        assert group_rois({}) == []


class TestInferPrompt:
    def test_single_patch_modes_coincide(self):
        boxes = {0: (10, 10, 20, 20)}
        region = group_rois(boxes)[0]
        like = infer_prompt(region, boxes, {0: 0.7}, "likelihood")
        center = infer_prompt(region, boxes, {0: 0.7}, "center")
        assert like.prompt == center.prompt == (15, 15)

    def test_argmax_member(self):
        boxes = {0: (0, 0, 10, 10), 1: (5, 0, 15, 10)}
        region = group_rois(boxes)[0]
        out = infer_prompt(region, boxes, {0: 0.9, 1: 0.7}, "likelihood")
        assert out.prompt == (5, 5)
        assert out.peak_confidence == 0.9

    def test_tie_lowest_index(self):
        boxes = {0: (0, 0, 10, 10), 1: (5, 0, 15, 10)}
        region = group_rois(boxes)[0]
        out = infer_prompt(region, boxes, {0: 0.8, 1: 0.8}, "likelihood")
        assert out.prompt == (5, 5)

    def test_random_region_matches_scan_oracle(self):
        rng = np.random.default_rng(9)
        boxes = {i: (i * 4, 0, i * 4 + 8, 8) for i in range(8)}
        confidences = {i: float(rng.random()) for i in range(8)}
        region = group_rois(boxes)[0]
        out = infer_prompt(region, boxes, confidences, "likelihood")
        best = min(
            (p for p in boxes
             if confidences[p] == max(confidences.values())))
        x0, y0, x1, y1 = boxes[best]
        assert out.prompt == ((x0 + x1) // 2, (y0 + y1) // 2)
        center = infer_prompt(region, boxes, confidences, "center")
        rx0, ry0, rx1, ry1 = region.roi
        assert center.prompt == ((rx0 + rx1) // 2, (ry0 + ry1) // 2)

    def test_prompt_inside_roi_enforced(self):
        with pytest.raises(ValueError, match="outside"):
            PromptedRegion((0, 0, 4, 4), [0], 0.5, prompt=(10, 10))

    def test_missing_confidence(self):
        boxes = {0: (0, 0, 4, 4)}
        region = group_rois(boxes)[0]
        with pytest.raises(KeyError, match="confidence"):
            infer_prompt(region, boxes, {}, "likelihood")


class FixedConfidenceModel:
    """Test double standing in for a trained model inside run_guidance."""


def guidance_setup(confidence_field, width=40, height=40):
    """Grid + features engineered so patch confidences are known.

    confidence_field: patch index -> desired high/low (True/False).
    Trains a real model on two separated 1-D features.
    """
    from partguide.classifier import TrainConfig, train
    grid = build_grid("img", width, height, divisor=5, overlap_fraction=0.0)
    train_x = np.array([[1.0], [1.1], [0.9], [-1.0], [-1.1], [-0.9]])
    train_y = np.array([1, 1, 1, 0, 0, 0])
    model = train(train_x, train_y, "part", TrainConfig(C=10.0, gamma=1.0))
    keys = []
    rows = []
    for patch in grid.patches:
        keys.append(("img", patch.index))
        high = confidence_field(patch.index)
        rows.append([1.0 if high else -1.0])
    features = FeatureBlob(keys, np.array(rows, dtype=np.float32))
    return grid, features, model


class TestRunGuidance:
    def test_nothing_above_threshold(self):
        grid, features, model = guidance_setup(lambda i: False)
        assert run_guidance(grid, features, model, Variant.LGSAM) == []

    def test_single_patch_lgsam_vs_patch_naive(self):
        grid, features, model = guidance_setup(lambda i: i == 5)
        roi = run_guidance(grid, features, model, Variant.LGSAM)
        naive = run_guidance(grid, features, model, Variant.PATCH_NAIVE)
        assert len(roi) == len(naive) == 1
        assert roi[0].roi == naive[0].roi
        assert roi[0].prompt is not None
        assert naive[0].prompt is None

    def test_two_blobs_match_grouping_oracle(self):
        grid, features, model = guidance_setup(lambda i: i in {0, 1, 23, 24})
        regions = run_guidance(grid, features, model, Variant.LGSAM)
        boxes = {p.index: p.box for p in grid.patches
                 if p.index in {0, 1, 23, 24}}
        oracle = brute_force_components(boxes)
        assert sorted(r.member_patches for r in regions) == oracle

    def test_variant_prompt_presence(self):
        grid, features, model = guidance_setup(lambda i: i in {0, 1})
        assert all(r.prompt for r in
                   run_guidance(grid, features, model, Variant.CGSAM))
        assert all(r.prompt is None for r in
                   run_guidance(grid, features, model, Variant.GGSAM))
        assert all(r.prompt for r in
                   run_guidance(grid, features, model, Variant.PATCH_CGSAM))
        assert all(r.prompt is None for r in
                   run_guidance(grid, features, model, Variant.PATCH_GGSAM))

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(3)
        field = {i: bool(rng.random() > 0.5) for i in range(64)}
        grid, features, model = guidance_setup(lambda i: field[i])
        low = run_guidance(grid, features, model, Variant.LGSAM, 0.3)
        high = run_guidance(grid, features, model, Variant.LGSAM, 0.7)
        low_sets = [set(r.member_patches) for r in low]
        for region in high:
            members = set(region.member_patches)
            assert any(members <= s for s in low_sets)

    def test_missing_feature(self):
        grid, features, model = guidance_setup(lambda i: True)
        small = FeatureBlob(features.keys[:3], features.matrix[:3])
        with pytest.raises(KeyError, match="no feature"):
            run_guidance(grid, small, model, Variant.LGSAM)


class TestSegment:
    def test_patch_naive_fills_box(self):
        region = PromptedRegion((10, 10, 20, 20), [0], 0.9)
        mask = segment(region, 0, "img", Variant.PATCH_NAIVE, "part", None,
                       40, 40)
        grid = decode_rle(mask)
        assert grid[10:20, 10:20].all()
        assert grid.sum() == 100

    def test_oracle_backend_full_part_iou_one(self):
        from partguide.evaluation import iou
        gt_pixels = np.zeros((40, 40), dtype=bool)
        gt_pixels[12:18, 12:18] = True
        gt = encode_rle(gt_pixels, "img", "part")
        backend = OracleBackend({("img", "part"): gt})
        backend.part_class = "part"
        region = PromptedRegion((10, 10, 20, 20), [0], 0.9, prompt=(15, 15))
        mask = segment(region, 0, "img", Variant.LGSAM, "part", backend,
                       40, 40)
        assert iou(mask, gt) == 1.0

    def test_union_popcount_bounded(self):
        pixels = np.zeros((30, 30), dtype=bool)
        pixels[5:25, 5:25] = True
        gt = encode_rle(pixels, "img", "part")
        backend = OracleBackend({("img", "part"): gt})
        backend.part_class = "part"
        regions = [PromptedRegion((0, 0, 20, 20), [0], 0.9, (10, 10)),
                   PromptedRegion((10, 10, 30, 30), [1], 0.8, (20, 20))]
        masks = [segment(r, i, "img", Variant.LGSAM, "part", backend, 30, 30)
                 for i, r in enumerate(regions)]
        union = decode_rle(masks[0]) | decode_rle(masks[1])
        total = sum(m.popcount() for m in masks)
        assert union.sum() <= total
        # pixelwise: union only where some region mask is set
        for mask in masks:
            assert (decode_rle(mask) <= union).all()

    def test_boxfill_backend(self):
        backend = BoxfillBackend()
        response = backend.segment({"id": 0, "image_id": "img",
                                    "roi": [0, 0, 4, 3], "prompt": None})
        assert response["rle"] == [[0, 12]]

    def test_mask_exceeding_roi_rejected(self):
        class BadBackend:
            def segment(self, request):
                return {"id": 0, "rle": [[0, 100]], "width": 50,
                        "height": 2, "score": 1.0}

        region = PromptedRegion((0, 0, 10, 10), [0], 0.9, (5, 5))
        with pytest.raises(BackendError, match="exceeds roi"):
            segment(region, 0, "img", Variant.LGSAM, "part", BadBackend(),
                    40, 40)

    def test_request_wire_format(self):
        region = PromptedRegion((1, 2, 9, 10), [0], 0.9, prompt=(4, 5))
        request = make_request(3, "img", region, Variant.LGSAM, "wheel")
        assert request == {"id": 3, "image_id": "img", "roi": [1, 2, 9, 10],
                           "prompt": {"point": [4, 5]}}
        text = make_request(3, "img", region, Variant.GGSAM, "wheel")
        assert text["prompt"] == {"text": "wheel"}
        region_no_prompt = PromptedRegion((1, 2, 9, 10), [0], 0.9)
        bare = make_request(0, "img", region_no_prompt, Variant.PATCH_NAIVE,
                            "wheel")
        assert bare["prompt"] is None

    def test_backend_failure_recorded_run_continues(self):
        class FlakyBackend:
            def __init__(self):
                self.calls = 0

            def segment(self, request):
                self.calls += 1
                if request["id"] == 0:
                    raise BackendError("boom")
                x0, y0, x1, y1 = request["roi"]
                w, h = x1 - x0, y1 - y0
                return {"id": request["id"], "rle": [[0, w * h]],
                        "width": w, "height": h, "score": 1.0}

        grid, features, model = guidance_setup(lambda i: i in {0, 24})
        result = predict_part_mask(grid, features, model, Variant.LGSAM,
                                   FlakyBackend(), "part")
        assert len(result.failures) == 1
        assert result.mask.popcount() > 0
