import math

import numpy as np
import pytest

from iqarag.corpus import ImageRecord
from iqarag.errors import DimensionMismatchError, ValidationError
from iqarag.featstore import FeatureMatrix
from iqarag.retrieval import (
    AnchorEntry,
    AnchorSet,
    Neighbor,
    RetrievalIndex,
    bin_of,
    knn,
    l2_distance,
    retrieve,
    select_anchors,
)


def oracle_knn(data, mos, ids, query, k):
    """Reference search: trust math.dist and an explicit (distance, row) sort."""
    dists = [math.dist([float(v) for v in row], [float(v) for v in query]) for row in data]
    order = sorted(range(len(ids)), key=lambda i: (dists[i], i))[:k]
    return [(ids[i], dists[i], mos[i]) for i in order]


def make_index(rng, n, d):
    data = rng.standard_normal((n, d)).astype(np.float32)
    ids = tuple(f"r{i:04d}" for i in range(n))
    mos = rng.uniform(0, 1, n)
    return RetrievalIndex(FeatureMatrix(ids=ids, data=data), mos), data, mos, ids


class TestL2Distance:
    def test_known_values(self):
        assert l2_distance([0, 0], [3, 4]) == 5.0
        assert l2_distance([1.0], [1.0]) == 0.0

    def test_matches_math_dist(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            d = int(rng.integers(1, 20))
            a = rng.standard_normal(d)
            b = rng.standard_normal(d)
            assert math.isclose(l2_distance(a, b), math.dist(a, b), rel_tol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            l2_distance([1, 2], [1, 2, 3])
        with pytest.raises(DimensionMismatchError):
            l2_distance([[1, 2]], [1, 2])


class TestKnn:
    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            d = int(rng.integers(1, 12))
            index, data, mos, ids = make_index(rng, n, d)
            query = rng.standard_normal(d)
            k = int(rng.integers(1, n + 1))
            got = knn(index, query, k)
            want = oracle_knn(data, mos, ids, query, k)
            assert [nb.id for nb in got] == [w[0] for w in want]
            for nb, w in zip(got, want):
                assert math.isclose(nb.distance, w[1], rel_tol=1e-9, abs_tol=1e-12)
                assert nb.mos == w[2]

    def test_ranks_are_one_based_and_sorted(self):
        rng = np.random.default_rng(8)
        index, *_ = make_index(rng, 30, 4)
        got = knn(index, rng.standard_normal(4), 10)
        assert [nb.rank for nb in got] == list(range(1, 11))
        dists = [nb.distance for nb in got]
        assert dists == sorted(dists)

    def test_exact_ties_break_by_row_index(self):
        # duplicated rows produce identical distances in any arithmetic
        row = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        data = np.stack([row, row + 1, row, row])
        index = RetrievalIndex(
            FeatureMatrix(ids=("a", "b", "c", "d"), data=data), [0.1, 0.2, 0.3, 0.4]
        )
        got = knn(index, row.astype(np.float64), 4)
        assert [nb.id for nb in got] == ["a", "c", "d", "b"]

    def test_k_larger_than_index(self):
        rng = np.random.default_rng(9)
        index, *_ = make_index(rng, 5, 3)
        assert len(knn(index, rng.standard_normal(3), 50)) == 5

    def test_invalid_inputs(self):
        rng = np.random.default_rng(10)
        index, *_ = make_index(rng, 5, 3)
        with pytest.raises(ValidationError):
            knn(index, rng.standard_normal(3), 0)
        with pytest.raises(DimensionMismatchError):
            knn(index, rng.standard_normal(4), 1)

    def test_empty_index_rejected(self):
        empty = RetrievalIndex(
            FeatureMatrix(ids=(), data=np.zeros((0, 3), dtype=np.float32)), []
        )
        with pytest.raises(ValidationError, match="empty"):
            knn(empty, np.zeros(3), 1)


class TestBins:
    def test_boundaries_exact(self):
        cases = {0.0: 1, 0.19: 1, 0.2: 2, 0.59: 3, 0.799: 4, 0.8: 5, 1.0: 5}
        for mos, want in cases.items():
            assert bin_of(mos) == want

    def test_all_edges(self):
        for j in range(1, 6):
            lo = (j - 1) / 5
            assert bin_of(lo) == j
        assert bin_of(1.0) == 5

    def test_matches_interval_definition(self):
        rng = np.random.default_rng(77)
        for mos in rng.uniform(0, 1, 2000):
            b = bin_of(float(mos))
            # direct membership check of the half-open interval
            assert (b - 1) / 5 <= mos and (mos < b / 5 or b == 5)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            bin_of(-0.01)
        with pytest.raises(ValidationError):
            bin_of(1.01)


def neighbor(i, mos, rank):
    return Neighbor(id=f"n{i}", distance=float(rank), mos=mos, rank=rank)


class TestSelectAnchors:
    def test_first_per_bin_wins(self):
        nbs = [
            neighbor(0, 0.55, 1),  # bin 3
            neighbor(1, 0.42, 2),  # bin 3 again, skipped
            neighbor(2, 0.05, 3),  # bin 1
            neighbor(3, 0.91, 4),  # bin 5
            neighbor(4, 0.18, 5),  # bin 1 again, skipped
        ]
        anchors = select_anchors(nbs, "q")
        assert [a.id for a in anchors.entries] == ["n2", "n0", "n3"]
        assert [a.bin_index for a in anchors.entries] == [1, 3, 5]
        assert [a.rank for a in anchors.entries] == [3, 1, 4]

    def test_output_sorted_by_bin_not_rank(self):
        nbs = [neighbor(0, 0.95, 1), neighbor(1, 0.05, 2)]
        anchors = select_anchors(nbs, "q")
        assert [a.bin_index for a in anchors.entries] == [1, 5]
        assert [a.id for a in anchors.entries] == ["n1", "n0"]

    def test_at_most_one_per_bin_and_cap(self):
        rng = np.random.default_rng(55)
        for _ in range(200):
            nbs = [
                neighbor(i, float(m), i + 1)
                for i, m in enumerate(rng.uniform(0, 1, int(rng.integers(1, 40))))
            ]
            anchors = select_anchors(nbs, "q")
            bins = [a.bin_index for a in anchors.entries]
            assert len(bins) == len(set(bins))
            assert len(bins) <= 5
            assert bins == sorted(bins)

    def test_max_anchors_keeps_closest(self):
        nbs = [
            neighbor(0, 0.05, 1),  # bin 1
            neighbor(1, 0.25, 2),  # bin 2
            neighbor(2, 0.45, 3),  # bin 3
            neighbor(3, 0.65, 4),  # bin 4
            neighbor(4, 0.85, 5),  # bin 5
        ]
        anchors = select_anchors(nbs, "q", max_anchors=2)
        assert [a.id for a in anchors.entries] == ["n0", "n1"]

    def test_max_anchors_trims_by_rank_then_orders_by_bin(self):
        nbs = [
            neighbor(0, 0.85, 1),  # bin 5, closest
            neighbor(1, 0.05, 2),  # bin 1
            neighbor(2, 0.45, 3),  # bin 3
            neighbor(3, 0.25, 4),  # bin 2, trimmed
        ]
        anchors = select_anchors(nbs, "q", max_anchors=3)
        assert [a.id for a in anchors.entries] == ["n1", "n2", "n0"]
        assert [a.bin_index for a in anchors.entries] == [1, 3, 5]

    def test_empty_neighbors_give_empty_set(self):
        anchors = select_anchors([], "q")
        assert len(anchors) == 0

    def test_max_anchors_range(self):
        with pytest.raises(ValidationError):
            select_anchors([], "q", max_anchors=0)
        with pytest.raises(ValidationError):
            select_anchors([], "q", max_anchors=6)


class TestAnchorSet:
    def test_rejects_duplicate_bins(self):
        e = AnchorEntry(id="a", mos=0.5, bin_index=3, rank=1)
        with pytest.raises(ValidationError):
            AnchorSet(query_id="q", entries=(e, e))

    def test_rejects_unsorted_bins(self):
        e1 = AnchorEntry(id="a", mos=0.9, bin_index=5, rank=1)
        e2 = AnchorEntry(id="b", mos=0.1, bin_index=1, rank=2)
        with pytest.raises(ValidationError):
            AnchorSet(query_id="q", entries=(e1, e2))


class TestRetrieve:
    def test_composition_equals_manual_pipeline(self):
        rng = np.random.default_rng(88)
        index, *_ = make_index(rng, 40, 6)
        q = rng.standard_normal(6)
        direct = retrieve(index, q, 15, "query", max_anchors=4)
        manual = select_anchors(knn(index, q, 15), "query", max_anchors=4)
        assert direct == manual

    def test_build_from_records(self):
        rng = np.random.default_rng(12)
        data = rng.standard_normal((4, 3)).astype(np.float32)
        matrix = FeatureMatrix(ids=("a", "b", "c", "d"), data=data)
        recs = [
            ImageRecord(id="c", path="c.png", dataset="d", mos_raw=0.3, mos_norm=0.3),
            ImageRecord(id="a", path="a.png", dataset="d", mos_raw=0.9, mos_norm=0.9),
        ]
        index = RetrievalIndex.build(matrix, recs)
        assert index.features.ids == ("c", "a")
        np.testing.assert_array_equal(index.features.data[0], matrix.row("c"))
        np.testing.assert_array_equal(index.mos, [0.3, 0.9])

    def test_index_score_validation(self):
        data = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(ValidationError):
            RetrievalIndex(FeatureMatrix(ids=("a", "b"), data=data), [0.5])
        with pytest.raises(ValidationError):
            RetrievalIndex(FeatureMatrix(ids=("a", "b"), data=data), [0.5, 1.5])
