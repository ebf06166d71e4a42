"""Exact nearest-neighbour search (tree, brute force, table) and features."""
import numpy as np
import pytest

from mvfuse.dataio import PointCloud
from mvfuse.neighborhood import (
    CoordStats,
    KDTree,
    assemble_point_features,
    assemble_set_features,
    batch_point_features,
    batch_set_features,
    brute_force_knn,
    compute_coord_stats,
    knn_query,
    knn_table,
)


def _cloud(rows):
    return PointCloud(np.asarray(rows, dtype=np.float64))


class TestKDTree:
    def test_single_point_is_its_own_neighbour(self):
        cloud = _cloud([[1.0, 2.0, 3.0, 0.0]])
        idx, dist = knn_query(KDTree(cloud), 0, 1)
        assert idx.tolist() == [0]
        assert dist.tolist() == [0.0]

    def test_duplicates_tie_break_by_index(self):
        cloud = _cloud([
            [1.0, 1.0, 1.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [9.0, 9.0, 9.0, 0.0],
        ])
        idx, dist = knn_query(KDTree(cloud), 1, 2)
        assert idx.tolist() == [0, 1]
        assert dist.tolist() == [0.0, 0.0]

    def test_collinear_points(self):
        cloud = _cloud([
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [3.0, 0.0, 0.0, 0.0],
        ])
        idx, dist = knn_query(KDTree(cloud), 0, 2)
        assert idx.tolist() == [0, 1]
        np.testing.assert_allclose(dist, [0.0, 1.0])

    def test_querying_all_points_returns_them_sorted(self, make_cloud):
        cloud = make_cloud(40, seed=1)
        idx, dist = knn_query(KDTree(cloud), 7, 40)
        assert sorted(idx.tolist()) == list(range(40))
        assert (np.diff(dist) >= 0).all()

    def test_matches_brute_force_on_a_large_cloud(self, make_cloud):
        cloud = make_cloud(1000, seed=2)
        tree = KDTree(cloud)
        for q in range(0, 1000, 97):
            ti, td = knn_query(tree, q, 12)
            bi, bd = brute_force_knn(cloud, q, 12)
            np.testing.assert_array_equal(ti, bi)
            np.testing.assert_allclose(td, bd, rtol=0, atol=0)

    def test_small_leaf_size_changes_nothing(self, make_cloud):
        cloud = make_cloud(100, seed=3)
        a = knn_query(KDTree(cloud, leaf_size=1), 5, 9)
        b = knn_query(KDTree(cloud, leaf_size=64), 5, 9)
        np.testing.assert_array_equal(a[0], b[0])

    def test_arbitrary_query_points_are_supported(self, make_cloud):
        cloud = make_cloud(50, seed=4)
        tree = KDTree(cloud)
        probe = np.array([0.5, -1.0, 2.0])
        idx, dist = tree.query_point(probe, 5)
        full = np.linalg.norm(cloud.xyz - probe, axis=1)
        order = np.lexsort((np.arange(50), full))[:5]
        np.testing.assert_array_equal(idx, order)


class TestBruteForce:
    def test_output_is_sorted_by_distance_then_index(self, make_cloud):
        cloud = make_cloud(60, seed=5)
        idx, dist = brute_force_knn(cloud, 3, 60)
        key = list(zip(dist.tolist(), idx.tolist()))
        assert key == sorted(key)

    def test_permutation_consistency(self, make_cloud):
        cloud = make_cloud(80, seed=6)
        perm = np.random.default_rng(7).permutation(80)
        permuted = PointCloud(cloud.points[perm])
        # position of original index i inside the permuted cloud
        back = np.empty(80, dtype=np.int64)
        back[perm] = np.arange(80)
        for q in (0, 11, 42):
            base_idx, base_dist = brute_force_knn(cloud, q, 8)
            perm_idx, perm_dist = brute_force_knn(permuted, int(back[q]), 8)
            assert set(perm[perm_idx].tolist()) == set(base_idx.tolist())
            np.testing.assert_allclose(np.sort(perm_dist), np.sort(base_dist),
                                       atol=0)

    def test_neighbour_count_is_validated(self, make_cloud):
        cloud = make_cloud(5, seed=8)
        with pytest.raises(ValueError):
            brute_force_knn(cloud, 0, 6)
        with pytest.raises(ValueError):
            brute_force_knn(cloud, 0, 0)


class TestKnnTable:
    def test_agrees_with_both_point_routes(self, make_cloud):
        cloud = make_cloud(300, seed=9)
        table = knn_table(cloud, np.arange(300), 10)
        tree = KDTree(cloud)
        for q in range(0, 300, 41):
            np.testing.assert_array_equal(table[q], knn_query(tree, q, 10)[0])
            np.testing.assert_array_equal(table[q], brute_force_knn(cloud, q, 10)[0])

    def test_chunking_does_not_change_results(self, make_cloud):
        cloud = make_cloud(120, seed=10)
        whole = knn_table(cloud, np.arange(120), 6, chunk=1024)
        pieces = knn_table(cloud, np.arange(120), 6, chunk=17)
        np.testing.assert_array_equal(whole, pieces)

    def test_subset_queries(self, make_cloud):
        cloud = make_cloud(90, seed=11)
        subset = np.array([3, 50, 88])
        table = knn_table(cloud, subset, 4)
        assert table.shape == (3, 4)
        for row, q in zip(table, subset):
            np.testing.assert_array_equal(row, brute_force_knn(cloud, int(q), 4)[0])

    def test_translation_leaves_neighbours_unchanged(self, make_cloud):
        cloud = make_cloud(150, seed=12)
        shifted = PointCloud(cloud.points + np.array([100.0, -40.0, 7.0, 0.0]))
        a = knn_table(cloud, np.arange(150), 8)
        b = knn_table(shifted, np.arange(150), 8)
        np.testing.assert_array_equal(a, b)

    def test_every_point_is_its_own_first_neighbour(self, make_cloud):
        cloud = make_cloud(70, seed=13)
        table = knn_table(cloud, np.arange(70), 5)
        np.testing.assert_array_equal(table[:, 0], np.arange(70))


class TestFeatureAssembly:
    def test_point_descriptor_layout(self):
        cloud = _cloud([[1.0, 2.0, 3.0, 0.5]])
        f = np.array([[0.7, 0.3]])
        g = np.array([[0.4, 0.6]])
        feats = assemble_point_features(0, f, g, cloud)
        np.testing.assert_allclose(feats, [0.7, 0.3, 0.4, 0.6, 1.0, 2.0, 3.0, 0.5])

    def test_point_descriptor_width_scales_with_classes(self, make_cloud, make_scores):
        cloud = make_cloud(4, seed=14)
        f = make_scores(4, 19, seed=1)
        g = make_scores(4, 19, seed=2)
        assert assemble_point_features(2, f, g, cloud).shape == (42,)

    def test_self_neighbour_has_zero_offset(self, make_cloud, make_scores):
        cloud = make_cloud(6, seed=15)
        f = make_scores(6, 3, seed=3)
        g = make_scores(6, 3, seed=4)
        row = assemble_set_features(2, [2], f, g, cloud)[0]
        np.testing.assert_allclose(row[6:], [0.0, 0.0, 0.0, 0.0], atol=0)

    def test_offset_and_length_for_a_3_4_5_triangle(self):
        cloud = _cloud([
            [0.0, 0.0, 0.0, 0.1],
            [3.0, 4.0, 0.0, 0.9],
        ])
        f = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = np.array([[0.5, 0.5], [0.5, 0.5]])
        row = assemble_set_features(0, [1], f, g, cloud)[0]
        np.testing.assert_allclose(row, [0.0, 1.0, 0.5, 0.5, 3.0, 4.0, 0.0, 5.0])

    def test_set_shape_for_the_full_size_head(self, make_cloud, make_scores):
        cloud = make_cloud(30, seed=16)
        f = make_scores(30, 19, seed=5)
        g = make_scores(30, 19, seed=6)
        table = knn_table(cloud, np.arange(30), 15)
        sets = assemble_set_features(0, table[0], f, g, cloud)
        assert sets.shape == (15, 42)

    def test_batch_forms_agree_with_single_forms(self, make_cloud, make_scores):
        cloud = make_cloud(25, seed=17)
        f = make_scores(25, 4, seed=7)
        g = make_scores(25, 4, seed=8)
        table = knn_table(cloud, np.arange(25), 6)
        batch_p = batch_point_features(np.array([3, 9]), f, g, cloud)
        batch_s = batch_set_features(np.array([3, 9]), table[[3, 9]], f, g, cloud)
        for j, q in enumerate((3, 9)):
            np.testing.assert_array_equal(batch_p[j],
                                          assemble_point_features(q, f, g, cloud))
            np.testing.assert_array_equal(batch_s[j],
                                          assemble_set_features(q, table[q], f, g, cloud))

    def test_standardization_rescales_coordinates_only(self, make_cloud, make_scores):
        cloud = make_cloud(20, seed=18)
        f = make_scores(20, 3, seed=9)
        g = make_scores(20, 3, seed=10)
        stats = compute_coord_stats([cloud])
        plain = assemble_point_features(4, f, g, cloud)
        scaled = assemble_point_features(4, f, g, cloud, stats)
        np.testing.assert_array_equal(plain[:6], scaled[:6])
        expected = (cloud.points[4] - stats.mean) / stats.std
        np.testing.assert_allclose(scaled[6:], expected)

    def test_standardized_offsets_rescale_their_length(self, make_cloud, make_scores):
        cloud = make_cloud(20, seed=19)
        f = make_scores(20, 3, seed=11)
        g = make_scores(20, 3, seed=12)
        stats = compute_coord_stats([cloud])
        row = assemble_set_features(0, [5], f, g, cloud, stats)[0]
        delta = (cloud.xyz[5] - cloud.xyz[0]) / stats.std[:3]
        np.testing.assert_allclose(row[6:9], delta)
        assert row[9] == pytest.approx(np.linalg.norm(delta))

    def test_neighbour_table_shape_is_validated(self, make_cloud, make_scores):
        cloud = make_cloud(8, seed=20)
        f = make_scores(8, 2, seed=13)
        g = make_scores(8, 2, seed=14)
        with pytest.raises(ValueError, match="does not match"):
            batch_set_features(np.array([0, 1]), np.zeros((3, 4), dtype=np.int64),
                               f, g, cloud)


def test_coord_stats_guard_against_degenerate_deviation():
    cloud = _cloud([[1.0, 1.0, 1.0, 0.5], [1.0, 1.0, 1.0, 0.5]])
    stats = compute_coord_stats([cloud])
    assert (stats.std >= 1e-8).all()
    with pytest.raises(ValueError, match="zero points"):
        compute_coord_stats([_cloud(np.zeros((0, 4)))])
