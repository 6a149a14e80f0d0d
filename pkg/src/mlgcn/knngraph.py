"""Directed k-nearest-neighbor graphs with self-loops.

Every node's neighbor list starts with the node itself, followed by the
k-1 nearest other nodes in ascending squared-distance order. Ties break
toward the lower node index so that graphs are reproducible across
platforms and construction strategies. Distances are compared in float64
regardless of the model's compute precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidK, ShapeMismatch
from .pointset import PointCloud


@dataclass
class KnnGraph:
    """Neighbor lists, shape ``(n_nodes, k)``; ``neighbors[i, 0] == i``."""

    n_nodes: int
    k: int
    neighbors: np.ndarray

    def __post_init__(self):
        neighbors = np.asarray(self.neighbors, dtype=np.int64)
        if neighbors.shape != (self.n_nodes, self.k):
            raise ShapeMismatch(
                f"neighbor table {neighbors.shape} != ({self.n_nodes}, {self.k})"
            )
        self.neighbors = neighbors


def _check_k(k: int, n: int) -> None:
    if k < 1 or k > n:
        raise InvalidK(f"k={k} outside [1, {n}]")


def build_knn_bruteforce(cloud: PointCloud, k: int) -> KnnGraph:
    """Exact KNN via the full pairwise squared-distance matrix, O(N^2)."""
    pts = cloud.points
    n = cloud.n_points
    _check_k(k, n)

    sq = np.einsum("ij,ij->i", pts, pts)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    # force the self-loop strictly first, even among coincident points
    np.fill_diagonal(d2, -1.0)
    # stable sort keeps ascending index order among equal distances
    order = np.argsort(d2, axis=1, kind="stable")
    return KnnGraph(n, k, order[:, :k])


def build_knn_indexed(cloud: PointCloud, k: int) -> KnnGraph:
    """KNN via a kd-tree; produces exactly the brute-force neighbor lists.

    Fast path: query k+1 tree neighbors per node and re-rank them by
    (squared distance, index). A node falls back to an exhaustive
    radius query only when self was not returned or when the kept/dropped
    candidates are not separated by a clear distance gap, i.e. whenever a
    tie at the neighborhood boundary could make the tree's selection
    differ from the brute-force one.
    """
    pts = cloud.points
    n = cloud.n_points
    _check_k(k, n)

    rows = np.arange(n)
    neighbors = np.empty((n, k), dtype=np.int64)
    neighbors[:, 0] = rows
    if k == 1:
        return KnnGraph(n, 1, neighbors)

    tree = cKDTree(pts)
    k_query = min(k + 1, n)
    _, idx = tree.query(pts, k=k_query)
    idx = idx.astype(np.int64)

    # squared distances recomputed in the same arithmetic as the brute path
    delta = pts[idx] - pts[:, None, :]
    d2 = np.einsum("ijc,ijc->ij", delta, delta)
    self_mask = idx == rows[:, None]
    d2_ranked = np.where(self_mask, -1.0, d2)  # self strictly first
    order = np.lexsort((idx, d2_ranked))
    ranked_idx = np.take_along_axis(idx, order, axis=1)
    ranked_d2 = np.take_along_axis(d2_ranked, order, axis=1)

    safe = ranked_idx[:, 0] == rows  # self returned by the tree
    if k_query > k:
        # unreturned nodes lie at or beyond the dropped candidate (up to
        # rounding), so a clear gap proves the kept set is exactly right
        kept_max = ranked_d2[:, k - 1]
        dropped_min = ranked_d2[:, k]
        safe &= kept_max * (1.0 + 1e-9) + 1e-30 < dropped_min
    neighbors[safe, 1:] = ranked_idx[safe, 1:k]

    for i in np.nonzero(~safe)[0]:
        neighbors[i, 1:] = _exact_other_neighbors(tree, pts, int(i), k - 1)
    return KnnGraph(n, k, neighbors)


def _exact_other_neighbors(tree: cKDTree, pts: np.ndarray, i: int, count: int) -> np.ndarray:
    """The ``count`` nearest nodes other than ``i`` by (squared distance, index)."""
    dist, _ = tree.query(pts[i], k=min(count + 1, pts.shape[0]))
    radius = float(np.max(dist)) * (1.0 + 1e-9) + 1e-12
    cand = np.asarray(tree.query_ball_point(pts[i], radius), dtype=np.int64)
    cand = cand[cand != i]
    delta = pts[cand] - pts[i]
    d2 = np.einsum("ij,ij->i", delta, delta)
    order = np.lexsort((cand, d2))
    return cand[order[:count]]


def gather_neighbors(graph: KnnGraph, features: np.ndarray) -> np.ndarray:
    """Collect each node's neighbor feature rows: ``out[i, j] = features[neighbors[i, j]]``."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != graph.n_nodes:
        raise ShapeMismatch(
            f"features {features.shape} incompatible with {graph.n_nodes} nodes"
        )
    return features[graph.neighbors]


def scatter_neighbor_grads(graph: KnnGraph, grad_gathered: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`gather_neighbors`: scatter-add (N, k, C) back to (N, C)."""
    grad_gathered = np.asarray(grad_gathered)
    n, k, c = grad_gathered.shape
    if n != graph.n_nodes or k != graph.k:
        raise ShapeMismatch(
            f"gradient {grad_gathered.shape} incompatible with graph ({graph.n_nodes}, {graph.k})"
        )
    out = np.zeros((n, c), dtype=grad_gathered.dtype)
    np.add.at(out, graph.neighbors.ravel(), grad_gathered.reshape(n * k, c))
    return out


def dump_graph(graph: KnnGraph) -> str:
    """Debug text dump, one line per node: ``i: j0 j1 ... j(k-1)``."""
    lines = [
        f"{i}: " + " ".join(str(j) for j in graph.neighbors[i])
        for i in range(graph.n_nodes)
    ]
    return "\n".join(lines) + "\n"
