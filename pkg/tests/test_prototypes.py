from itertools import combinations

import numpy as np
import pytest

from partguide.dataset import FeatureBlob
from partguide.prototypes import (AnnotationRecord, Prototype,
                                  annotation_cost_comparison,
                                  approximate_polygon_vertices,
                                  cluster_prototypes, load_records,
                                  rank_prototypes, retrieval_efficacy,
                                  save_records, score_prototypes,
                                  simulate_annotation)


def blob_from(matrix, image_id="img"):
    keys = [(image_id, i) for i in range(len(matrix))]
    return FeatureBlob(keys, np.asarray(matrix, dtype=np.float32))


class TestClustering:
    def test_k1_single_prototype(self):
        rng = np.random.default_rng(0)
        blob = blob_from(rng.normal(size=(10, 3)))
        protos = cluster_prototypes(blob, 1, seed=0)
        assert len(protos) == 1
        assert len(protos[0].members) == 10
        normalized = blob.matrix / np.linalg.norm(blob.matrix, axis=1,
                                                  keepdims=True)
        assert np.allclose(protos[0].centroid, normalized.mean(axis=0))

    def test_two_blobs_match_exhaustive_partition(self):
        # oracle: best 2-partition by within-cluster squared distance on
        # normalized points, found by enumerating all splits of 10 points
        rng = np.random.default_rng(1)
        points = np.vstack([rng.normal([5, 0], 0.1, size=(5, 2)),
                            rng.normal([0, 5], 0.1, size=(5, 2))])
        blob = blob_from(points)
        protos = cluster_prototypes(blob, 2, seed=3)
        found = sorted(tuple(sorted(i for _, i in p.members))
                       for p in protos)

        normalized = points / np.linalg.norm(points, axis=1, keepdims=True)

        def cost(indices):
            sub = normalized[list(indices)]
            return float(((sub - sub.mean(axis=0)) ** 2).sum())

        best, best_cost = None, np.inf
        for size in range(1, 10):
            for group in combinations(range(10), size):
                rest = tuple(i for i in range(10) if i not in group)
                c = cost(group) + cost(rest)
                if c < best_cost:
                    best, best_cost = sorted([group, rest]), c
        assert found == [tuple(g) for g in best]

    def test_k_equals_patch_count(self):
        blob = blob_from(np.eye(4))
        protos = cluster_prototypes(blob, 4, seed=0)
        assert sorted(len(p.members) for p in protos) == [1, 1, 1, 1]

    def test_k_too_large(self):
        blob = blob_from(np.eye(3))
        with pytest.raises(ValueError, match="exceeds"):
            cluster_prototypes(blob, 4)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(2)
        blob = blob_from(rng.normal(size=(30, 4)))
        a = cluster_prototypes(blob, 5, seed=9)
        b = cluster_prototypes(blob, 5, seed=9)
        assert [p.members for p in a] == [p.members for p in b]

    def test_every_patch_assigned_to_nearest_centroid(self):
        rng = np.random.default_rng(4)
        blob = blob_from(rng.normal(size=(40, 3)))
        protos = cluster_prototypes(blob, 6, seed=1)
        normalized = blob.matrix / np.linalg.norm(blob.matrix, axis=1,
                                                  keepdims=True)
        centroids = np.stack([p.centroid for p in protos])
        assignment = {}
        for p in protos:
            for key in p.members:
                assignment[key] = p.id
        for row, key in enumerate(blob.keys):
            dist = np.linalg.norm(centroids - normalized[row], axis=1)
            assert dist[assignment[key]] <= dist.min() + 1e-9


class TestRanking:
    def protos(self, scores):
        return [Prototype(i, np.zeros(2), [("img", i)], {"wheel": s})
                for i, s in enumerate(scores)]

    def test_tie_broken_by_id(self):
        ranked = rank_prototypes(self.protos([0.9, 0.2, 0.9]), "wheel")
        assert [p.id for p in ranked] == [0, 2, 1]

    def test_single(self):
        ranked = rank_prototypes(self.protos([0.4]), "wheel")
        assert [p.id for p in ranked] == [0]

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(7)
        scores = list(rng.random(20))
        ranked = rank_prototypes(self.protos(scores), "wheel")
        oracle = sorted(range(20), key=lambda i: (-scores[i], i))
        assert [p.id for p in ranked] == oracle

    def test_all_equal_scores_identity_order(self):
        ranked = rank_prototypes(self.protos([0.5] * 6), "wheel")
        assert [p.id for p in ranked] == list(range(6))

    def test_missing_scores(self):
        with pytest.raises(KeyError, match="door"):
            rank_prototypes(self.protos([0.1]), "door")

    def test_score_is_member_mean(self):
        protos = [Prototype(0, np.zeros(2), [("img", 0), ("img", 1)])]
        scores = {("img", 0, "wheel"): 0.2, ("img", 1, "wheel"): 0.6}
        score_prototypes(protos, scores, ["wheel"])
        assert abs(protos[0].score_per_class["wheel"] - 0.4) < 1e-9


class TestAnnotationSimulator:
    def proto(self, n):
        return Prototype(0, np.zeros(2), [("img", i) for i in range(n)])

    def test_all_positive_one_click(self):
        truth = {("img", i): 1 for i in range(10)}
        record = simulate_annotation(self.proto(10), truth, "wheel")
        assert record.clicks == 1 and record.exceptions == []
        assert record.bulk_label == 1

    def test_all_negative_one_click(self):
        truth = {("img", i): 0 for i in range(10)}
        record = simulate_annotation(self.proto(10), truth, "wheel")
        assert record.clicks == 1 and record.bulk_label == 0

    def test_majority_positive_with_exceptions(self):
        truth = {("img", i): 1 if i < 8 else 0 for i in range(10)}
        record = simulate_annotation(self.proto(10), truth, "wheel")
        assert record.clicks == 3  # 1 + min(8, 2)
        assert record.bulk_label == 1
        assert sorted(record.exceptions) == [8, 9]

    def test_click_rule_exhaustive_size_6(self):
        proto = self.proto(6)
        for pattern in range(2 ** 6):
            labels = [(pattern >> i) & 1 for i in range(6)]
            truth = {("img", i): labels[i] for i in range(6)}
            record = simulate_annotation(proto, truth, "wheel")
            assert record.clicks == 1 + min(sum(labels), 6 - sum(labels))

    def test_relabeling_symmetry(self):
        proto = self.proto(7)
        rng = np.random.default_rng(0)
        labels = list(rng.integers(0, 2, 7))
        truth = {("img", i): int(labels[i]) for i in range(7)}
        flipped = {("img", i): 1 - int(labels[i]) for i in range(7)}
        assert simulate_annotation(proto, truth, "w").clicks == \
            simulate_annotation(proto, flipped, "w").clicks

    def test_member_labels_round_trip(self):
        proto = self.proto(5)
        truth = {("img", i): 1 if i != 3 else 0 for i in range(5)}
        record = simulate_annotation(proto, truth, "wheel")
        assert dict(record.member_labels(proto)) == truth


class TestRetrievalEfficacy:
    def test_all_positive(self):
        scores = {("img", i): 1.0 - i * 0.01 for i in range(8)}
        truth = {("img", i): 1 for i in range(8)}
        protos = [Prototype(0, np.zeros(2), list(scores))]
        raw, grouped = retrieval_efficacy(scores, protos, truth, 4)
        assert raw == grouped == 1.0

    def test_k_equal_universe_gives_base_rate(self):
        scores = {("img", i): float(i) for i in range(10)}
        truth = {("img", i): 1 if i < 3 else 0 for i in range(10)}
        protos = [Prototype(0, np.zeros(2), [("img", i) for i in range(5)]),
                  Prototype(1, np.zeros(2), [("img", i) for i in range(5, 10)])]
        raw, grouped = retrieval_efficacy(scores, protos, truth, 10)
        assert raw == grouped == 0.3

    def test_prototype_rescues_low_scoring_positive(self):
        # 12 patches: positives 0..3. Patch 3 scores low but shares a
        # prototype with the high-scoring positives; hand enumeration gives
        # raw precision@4 = 3/4, prototype precision@4 = 4/4.
        scores = {("img", 0): 0.95, ("img", 1): 0.90, ("img", 2): 0.85,
                  ("img", 3): 0.10}
        scores.update({("img", i): 0.5 - i * 0.01 for i in range(4, 12)})
        truth = {("img", i): 1 if i < 4 else 0 for i in range(12)}
        protos = [Prototype(0, np.zeros(2), [("img", i) for i in range(4)]),
                  Prototype(1, np.zeros(2), [("img", i) for i in range(4, 12)])]
        raw, grouped = retrieval_efficacy(scores, protos, truth, 4)
        assert raw == 0.75
        assert grouped == 1.0
        assert grouped > raw

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="exceeds"):
            retrieval_efficacy({("img", 0): 1.0}, [], {("img", 0): 1}, 2)


class TestCostComparison:
    def test_simple_ratio(self):
        records = {"wheel": [AnnotationRecord(0, "wheel", 1, [], 1)] * 5}
        table = annotation_cost_comparison(records, {"wheel": 25},
                                           {"wheel": 1})
        assert table[0]["patch_clicks_per_image"] == 5
        assert table[0]["ratio"] == 5.0

    def test_zero_exceptions_p_prototypes(self):
        records = {"door": [AnnotationRecord(i, "door", 1, [], 1)
                            for i in range(8)]}
        table = annotation_cost_comparison(records, {"door": 0}, {"door": 2})
        assert table[0]["patch_clicks_per_image"] == 4.0

    def test_three_class_fixture_matches_hand_computation(self):
        records = {
            "a": [AnnotationRecord(0, "a", 1, [1], 2),
                  AnnotationRecord(1, "a", 0, [], 1)],
            "b": [AnnotationRecord(0, "b", 1, [0, 2], 3)],
            "c": [AnnotationRecord(0, "c", 0, [], 1)] * 4,
        }
        table = annotation_cost_comparison(
            records, {"a": 30, "b": 12, "c": 8}, {"a": 3, "b": 2, "c": 2})
        by_class = {row["part_class"]: row for row in table}
        assert by_class["a"]["patch_clicks_per_image"] == pytest.approx(1.0)
        assert by_class["a"]["polygon_clicks_per_image"] == pytest.approx(10.0)
        assert by_class["a"]["ratio"] == pytest.approx(10.0)
        assert by_class["b"]["ratio"] == pytest.approx(6.0 / 1.5)
        assert by_class["c"]["ratio"] == pytest.approx(4.0 / 2.0)

    def test_zero_images_rejected(self):
        with pytest.raises(ValueError, match="zero images"):
            annotation_cost_comparison({"a": []}, {"a": 1}, {"a": 0})


class TestPolygonApproximation:
    def test_rectangle_has_four_vertices(self):
        grid = np.zeros((10, 10), dtype=bool)
        grid[2:7, 3:8] = True
        assert approximate_polygon_vertices(grid) == 4

    def test_empty_mask(self):
        assert approximate_polygon_vertices(np.zeros((4, 4), dtype=bool)) == 0

    def test_l_shape_has_six_vertices(self):
        grid = np.zeros((10, 10), dtype=bool)
        grid[2:8, 2:5] = True
        grid[5:8, 2:9] = True
        assert approximate_polygon_vertices(grid) == 6


def test_record_store_round_trip(tmp_path):
    records = [AnnotationRecord(0, "wheel", 1, [2], 2),
               AnnotationRecord(1, "door", 0, [], 1, source="human",
                                annotator="me")]
    path = tmp_path / "records.jsonl"
    save_records(records, path)
    save_records([records[0]], path)  # append-only
    loaded = load_records(path)
    assert len(loaded) == 3
    assert loaded[1].annotator == "me"
    assert loaded[0].to_json() == records[0].to_json()
