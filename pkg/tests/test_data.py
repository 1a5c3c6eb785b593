"""Vector file formats, synthetic data, and query splitting."""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from ivfroute.clustering import ClusteringParams, kmeans_standard
from ivfroute.data import (
    QuerySet,
    SplitSpec,
    VectorCollection,
    load_queries,
    load_vectors,
    read_fbin,
    read_fvecs,
    read_kv,
    save_vectors,
    split_indices,
    split_queries,
    synth_clustered,
    synth_clustered_labeled,
    write_fbin,
    write_fvecs,
    write_kv,
)


def random_matrix(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)).astype(np.float32)


class TestFbin:
    def test_minimal_file(self, tmp_path):
        """A hand-assembled two-vector file parses to the expected matrix."""
        payload = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype="<f4")
        raw = np.array([2, 3], dtype="<u4").tobytes() + payload.tobytes()
        path = tmp_path / "mini.fbin"
        path.write_bytes(raw)
        got = read_fbin(path)
        assert got.shape == (2, 3)
        np.testing.assert_array_equal(got, payload)

    def test_truncated_payload_rejected(self, tmp_path):
        raw = np.array([2, 3], dtype="<u4").tobytes() + np.zeros(5, dtype="<f4").tobytes()
        path = tmp_path / "short.fbin"
        path.write_bytes(raw)
        with pytest.raises(ValueError, match="payload"):
            read_fbin(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "header.fbin"
        path.write_bytes(b"\x01\x00\x00\x00")
        with pytest.raises(ValueError, match="header"):
            read_fbin(path)

    def test_zero_count_rejected(self, tmp_path):
        path = tmp_path / "empty.fbin"
        path.write_bytes(np.array([0, 4], dtype="<u4").tobytes())
        with pytest.raises(ValueError, match="zero"):
            read_fbin(path)

    def test_roundtrip_bytes_identical(self, tmp_path):
        """Saving a loaded file reproduces it byte for byte."""
        mat = random_matrix(10_000, 16, seed=11)
        first = tmp_path / "a.fbin"
        second = tmp_path / "b.fbin"
        write_fbin(first, mat)
        write_fbin(second, read_fbin(first))
        assert first.read_bytes() == second.read_bytes()
        np.testing.assert_array_equal(read_fbin(second), mat)


class TestFvecs:
    def test_roundtrip_bytes_identical(self, tmp_path):
        mat = random_matrix(10_000, 16, seed=12)
        first = tmp_path / "a.fvecs"
        second = tmp_path / "b.fvecs"
        write_fvecs(first, mat)
        write_fvecs(second, read_fvecs(first))
        assert first.read_bytes() == second.read_bytes()
        np.testing.assert_array_equal(read_fvecs(second), mat)

    def test_inconsistent_prefix_rejected(self, tmp_path):
        rec1 = np.array([2], dtype="<i4").tobytes() + np.zeros(2, dtype="<f4").tobytes()
        rec2 = np.array([3], dtype="<i4").tobytes() + np.zeros(3, dtype="<f4").tobytes()
        path = tmp_path / "bad.fvecs"
        path.write_bytes(rec1 + rec2)
        with pytest.raises(ValueError):
            read_fvecs(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "zero.fvecs"
        path.write_bytes(b"")
        with pytest.raises(ValueError, match="empty"):
            read_fvecs(path)


class TestLoadSave:
    def test_format_inferred_from_suffix(self, tmp_path):
        mat = random_matrix(20, 4)
        write_fvecs(tmp_path / "v.fvecs", mat)
        np.testing.assert_array_equal(load_vectors(tmp_path / "v.fvecs").vectors, mat)

    def test_missing_parent_requires_flag(self, tmp_path):
        coll = VectorCollection(random_matrix(3, 2))
        target = tmp_path / "nested" / "out.fbin"
        with pytest.raises(FileNotFoundError):
            save_vectors(coll, target)
        save_vectors(coll, target, create_parents=True)
        np.testing.assert_array_equal(load_vectors(target).vectors, coll.vectors)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_vectors(tmp_path / "nope.fbin")

    def test_non_finite_rejected(self, tmp_path):
        mat = random_matrix(4, 2)
        mat[1, 0] = np.nan
        write_fbin(tmp_path / "nan.fbin", mat)
        with pytest.raises(ValueError, match="non-finite"):
            load_vectors(tmp_path / "nan.fbin")

    def test_queries_share_format(self, tmp_path):
        mat = random_matrix(7, 3)
        write_fbin(tmp_path / "q.fbin", mat)
        qs = load_queries(tmp_path / "q.fbin")
        assert isinstance(qs, QuerySet)
        assert (qs.count, qs.dim) == (7, 3)


class TestVectorCollection:
    def test_immutable(self):
        coll = VectorCollection(random_matrix(5, 3))
        with pytest.raises(ValueError):
            coll.vectors[0, 0] = 1.0

    def test_rejects_1d(self):
        with pytest.raises(ValueError):
            VectorCollection(np.zeros(5, dtype=np.float32))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            VectorCollection(np.zeros((0, 3), dtype=np.float32))


class TestSynthClustered:
    def test_degenerate_single_center_no_spread(self):
        coll = synth_clustered(50, 8, 1, 0.0, seed=4)
        np.testing.assert_array_equal(coll.vectors, np.tile(coll.vectors[0], (50, 1)))

    def test_deterministic_in_seed(self):
        a = synth_clustered(200, 6, 5, 0.1, seed=9)
        b = synth_clustered(200, 6, 5, 0.1, seed=9)
        np.testing.assert_array_equal(a.vectors, b.vectors)
        c = synth_clustered(200, 6, 5, 0.1, seed=10)
        assert not np.array_equal(a.vectors, c.vectors)

    def test_sample_seed_keeps_centers(self):
        """A different sample seed draws fresh points from the same mixture."""
        _, centers_a, _ = synth_clustered_labeled(50, 6, 5, 0.1, seed=9)
        other, centers_b, _ = synth_clustered_labeled(50, 6, 5, 0.1, seed=9, sample_seed=77)
        np.testing.assert_array_equal(centers_a, centers_b)
        assert not np.array_equal(other.vectors, synth_clustered(50, 6, 5, 0.1, seed=9).vectors)

    def test_m_smaller_than_centers_rejected(self):
        with pytest.raises(ValueError):
            synth_clustered(3, 4, 5, 0.1, seed=0)

    def test_kmeans_recovers_tight_mixture(self):
        """With tiny spread, KMeans partitions align with the generating components.

        Components are matched to partitions by maximizing overlap (Hungarian
        assignment on the contingency table).
        """
        coll, _, labels = synth_clustered_labeled(2000, 16, 4, 0.01, seed=21)
        part = kmeans_standard(coll, ClusteringParams(n_partitions=4, seed=3))
        contingency = np.zeros((4, 4), dtype=np.int64)
        np.add.at(contingency, (labels, part.assignment.astype(np.int64)), 1)
        rows, cols = linear_sum_assignment(-contingency)
        purity = contingency[rows, cols].sum() / 2000
        assert purity >= 0.99


class TestSplit:
    def test_sizes_floor_with_remainder_to_train(self):
        train, val, test = split_indices(10, SplitSpec(0.6, 0.2, 0.2, seed=0))
        assert (len(train), len(val), len(test)) == (6, 2, 2)

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            split_indices(5, SplitSpec(1.0, 0.0, 0.0, seed=0))

    def test_too_few_queries_rejected(self):
        with pytest.raises(ValueError):
            split_indices(4, SplitSpec())

    def test_deterministic_and_exhaustive(self):
        for n in (5, 17, 101, 1000):
            spec = SplitSpec(seed=n)
            first = split_indices(n, spec)
            second = split_indices(n, spec)
            for a, b in zip(first, second):
                np.testing.assert_array_equal(a, b)
            merged = np.sort(np.concatenate(first))
            np.testing.assert_array_equal(merged, np.arange(n))

    def test_split_queries_matches_indices(self):
        qs = QuerySet(random_matrix(25, 3, seed=2))
        spec = SplitSpec(seed=5)
        train, val, test = split_queries(qs, spec)
        idx_train, idx_val, idx_test = split_indices(25, spec)
        np.testing.assert_array_equal(train.queries, qs.queries[idx_train])
        np.testing.assert_array_equal(val.queries, qs.queries[idx_val])
        np.testing.assert_array_equal(test.queries, qs.queries[idx_test])

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2)
        with pytest.raises(ValueError):
            SplitSpec(-0.1, 0.6, 0.5)


def test_kv_roundtrip(tmp_path):
    path = tmp_path / "x.meta"
    write_kv(path, {"a": 1, "name": "standard", "val": "x=y"})
    got = read_kv(path)
    assert got == {"a": "1", "name": "standard", "val": "x=y"}
