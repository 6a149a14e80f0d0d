"""KNN graph construction: oracle equivalence, tie-breaks, invariances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlgcn.errors import InvalidK, ShapeMismatch
from mlgcn.knngraph import (
    build_knn_bruteforce,
    build_knn_indexed,
    dump_graph,
    gather_neighbors,
    scatter_neighbor_grads,
)
from mlgcn.pointset import PointCloud


def sorted_neighbor_oracle(points: np.ndarray, k: int) -> np.ndarray:
    """Reference neighbor lists via per-node python sorting of all distances.

    Self first, then the k-1 closest others ordered by (squared distance,
    index). Kept deliberately naive and independent of the library path.
    """
    n = len(points)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        others = []
        for j in range(n):
            if j == i:
                continue
            delta = points[j] - points[i]
            others.append((float(np.dot(delta, delta)), j))
        others.sort()
        out[i, 0] = i
        out[i, 1:] = [j for _, j in others[: k - 1]]
    return out


class TestBruteForce:
    def test_collinear_points(self):
        cloud = PointCloud([[0, 0, 0], [1, 0, 0], [3, 0, 0]])
        graph = build_knn_bruteforce(cloud, 2)
        assert graph.neighbors.tolist() == [[0, 1], [1, 0], [2, 1]]

    def test_k1_is_self_only(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
        graph = build_knn_bruteforce(cloud, 1)
        assert graph.neighbors.tolist() == [[i] for i in range(10)]

    def test_against_full_sort_oracle(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(64, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 8)
        assert np.array_equal(graph.neighbors, sorted_neighbor_oracle(pts, 8))

    def test_invalid_k(self):
        cloud = PointCloud(np.zeros((4, 3)) + np.arange(4)[:, None])
        with pytest.raises(InvalidK):
            build_knn_bruteforce(cloud, 0)
        with pytest.raises(InvalidK):
            build_knn_bruteforce(cloud, 5)


class TestIndexed:
    def test_matches_bruteforce_large(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(1024, 3))
        a = build_knn_bruteforce(PointCloud(pts), 64)
        b = build_knn_indexed(PointCloud(pts), 64)
        assert np.array_equal(a.neighbors, b.neighbors)

    def test_k_equals_n_full_ordering(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(12, 3))
        graph = build_knn_indexed(PointCloud(pts), 12)
        for i in range(12):
            row = graph.neighbors[i]
            assert sorted(row.tolist()) == list(range(12))
            d2 = np.sum((pts[row] - pts[i]) ** 2, axis=1)
            assert np.all(np.diff(d2) >= 0)

    def test_all_coincident_tie_break(self):
        cloud = PointCloud(np.ones((6, 3)))
        for build in (build_knn_bruteforce, build_knn_indexed):
            graph = build(cloud, 3)
            for i in range(6):
                row = graph.neighbors[i].tolist()
                assert row[0] == i
                expected_rest = [j for j in range(6) if j != i][:2]
                assert row[1:] == expected_rest

    def test_grid_with_many_ties(self):
        # integer grid: massively tied distances exercise the tie-break path
        xs, ys, zs = np.meshgrid(np.arange(4), np.arange(4), np.arange(4))
        pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1).astype(float)
        a = build_knn_bruteforce(PointCloud(pts), 9)
        b = build_knn_indexed(PointCloud(pts), 9)
        assert np.array_equal(a.neighbors, b.neighbors)

    def test_clustered_duplicates(self):
        # duplicate groups larger and smaller than k
        rng = np.random.default_rng(77)
        pts = rng.integers(0, 3, size=(60, 3)).astype(float)
        for k in (1, 4, 17, 60):
            a = build_knn_bruteforce(PointCloud(pts), k)
            b = build_knn_indexed(PointCloud(pts), k)
            assert np.array_equal(a.neighbors, b.neighbors), k

    @given(st.integers(min_value=0, max_value=2**31 - 1),
           st.integers(min_value=4, max_value=512),
           st.integers(min_value=1, max_value=32))
    @settings(max_examples=30, deadline=None)
    def test_oracle_equivalence_property(self, seed, n, k):
        k = min(k, n)
        pts = np.random.default_rng(seed).normal(size=(n, 3))
        a = build_knn_bruteforce(PointCloud(pts), k)
        b = build_knn_indexed(PointCloud(pts), k)
        assert np.array_equal(a.neighbors, b.neighbors)

    def test_invalid_k(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(4, 3)))
        with pytest.raises(InvalidK):
            build_knn_indexed(cloud, 9)


class TestInvariances:
    def test_self_membership_first(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            pts = rng.normal(size=(30, 3))
            graph = build_knn_indexed(PointCloud(pts), 7)
            assert np.array_equal(graph.neighbors[:, 0], np.arange(30))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(40, 3))  # random -> distinct pairwise distances
        k = 6
        base = build_knn_bruteforce(PointCloud(pts), k).neighbors

        perm = rng.permutation(40)
        inverse = np.argsort(perm)
        permuted = build_knn_bruteforce(PointCloud(pts[perm]), k).neighbors
        # node perm[i] in the original maps to node i in the permuted cloud
        assert np.array_equal(inverse[base[perm]], permuted)

    def test_isometry_invariance(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(50, 3))
        theta = 0.7
        rot = np.array([
            [np.cos(theta), -np.sin(theta), 0],
            [np.sin(theta), np.cos(theta), 0],
            [0, 0, 1],
        ])
        moved = pts @ rot.T + np.array([10.0, -4.0, 2.5])
        a = build_knn_bruteforce(PointCloud(pts), 8).neighbors
        b = build_knn_bruteforce(PointCloud(moved), 8).neighbors
        assert np.array_equal(a, b)


class TestGather:
    def test_one_hot_identity_features(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(9, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 4)
        features = np.eye(9)
        out = gather_neighbors(graph, features)
        for i in range(9):
            for j in range(4):
                assert out[i, j].argmax() == graph.neighbors[i, j]
                assert out[i, j].sum() == 1.0

    def test_k1_returns_own_features(self):
        pts = np.random.default_rng(7).normal(size=(5, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 1)
        features = np.random.default_rng(8).normal(size=(5, 4))
        out = gather_neighbors(graph, features)
        assert np.array_equal(out[:, 0, :], features)

    def test_against_nested_loop_oracle(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(5, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 3)
        features = rng.normal(size=(5, 6))
        out = gather_neighbors(graph, features)
        for i in range(5):
            for j in range(3):
                assert np.array_equal(out[i, j], features[graph.neighbors[i, j]])

    def test_shape_mismatch(self):
        pts = np.random.default_rng(10).normal(size=(5, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 2)
        with pytest.raises(ShapeMismatch):
            gather_neighbors(graph, np.zeros((6, 4)))

    def test_scatter_is_gather_adjoint(self):
        # <gather(x), y> == <x, scatter(y)> for random x, y
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(7, 3))
        graph = build_knn_bruteforce(PointCloud(pts), 3)
        x = rng.normal(size=(7, 4))
        y = rng.normal(size=(7, 3, 4))
        lhs = float(np.sum(gather_neighbors(graph, x) * y))
        rhs = float(np.sum(x * scatter_neighbor_grads(graph, y)))
        assert abs(lhs - rhs) < 1e-10


def test_dump_format():
    pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)
    graph = build_knn_bruteforce(PointCloud(pts), 2)
    assert dump_graph(graph) == "0: 0 1\n1: 1 0\n2: 2 1\n"
