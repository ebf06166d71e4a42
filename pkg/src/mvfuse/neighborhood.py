"""Exact k nearest neighbours and per-point feature assembly.

Neighbour order is total and deterministic: candidates sort by squared
Euclidean distance with the lower point index breaking ties, so a query
point is always its own first neighbour. Three routes produce identical
results and are cross-checked in the tests: a KD tree with bucket leaves
(per-query reference route), a single-query brute force scan (oracle), and
a chunked brute force over many queries (throughput route for building
whole-scan neighbour tables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _coords(obj) -> np.ndarray:
    xyz = obj.xyz if hasattr(obj, "xyz") else np.asarray(obj, dtype=np.float64)
    xyz = np.ascontiguousarray(xyz, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise ValueError(f"coordinates must be (N, 3), got {xyz.shape}")
    if not np.all(np.isfinite(xyz)):
        raise ValueError("coordinates contain non-finite values")
    return xyz


class _Leaf:
    __slots__ = ("indices", "points")

    def __init__(self, indices: np.ndarray, points: np.ndarray):
        self.indices = indices
        self.points = points


class _Split:
    __slots__ = ("axis", "threshold", "left", "right")

    def __init__(self, axis: int, threshold: float, left, right):
        self.axis = axis
        self.threshold = threshold
        self.left = left
        self.right = right


class KDTree:
    """Static KD tree over 3-d points; leaves hold index buckets.

    Splits pick the axis with the largest extent and cut at the median of
    the (coordinate, index) order, so construction is deterministic and
    terminates even when every coordinate is identical. All left points
    satisfy ``coord <= threshold`` and all right points ``coord >=
    threshold``, which keeps the usual plane-distance pruning exact.
    """

    def __init__(self, points, leaf_size: int = 32):
        if leaf_size < 1:
            raise ValueError("leaf_size must be positive")
        self.xyz = _coords(points)
        self.n = self.xyz.shape[0]
        self.leaf_size = int(leaf_size)
        self._root = self._build(np.arange(self.n, dtype=np.int64)) if self.n else None

    def _build(self, indices: np.ndarray):
        if indices.size <= self.leaf_size:
            return _Leaf(indices, self.xyz[indices])
        sub = self.xyz[indices]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = np.lexsort((indices, sub[:, axis]))
        mid = indices.size // 2
        threshold = float(sub[order[mid], axis])
        return _Split(
            axis,
            threshold,
            self._build(indices[order[:mid]]),
            self._build(indices[order[mid:]]),
        )

    def query_point(self, q, n: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``n`` nearest stored points to coordinate ``q``.

        Returns (indices, distances) sorted by (distance, index). ``n``
        must be within the stored point count.
        """
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (3,):
            raise ValueError(f"query point must be shape (3,), got {q.shape}")
        if not 1 <= n <= self.n:
            raise ValueError(f"n {n} outside [1, {self.n}]")
        best: list[tuple[float, int]] = []
        self._search(self._root, q, n, best)
        idx = np.array([i for _, i in best], dtype=np.int64)
        d2 = np.array([d for d, _ in best])
        return idx, np.sqrt(d2)

    def _search(self, node, q: np.ndarray, n: int, best: list) -> None:
        if isinstance(node, _Leaf):
            if node.indices.size == 0:
                return
            diff = node.points - q
            d2 = (diff * diff).sum(axis=1)
            merge = sorted(best + list(zip(d2.tolist(), node.indices.tolist())))
            del best[:]
            best.extend(merge[:n])
            return
        delta = q[node.axis] - node.threshold
        near, far = (node.left, node.right) if delta < 0.0 else (node.right, node.left)
        self._search(near, q, n, best)
        if len(best) < n or delta * delta <= best[-1][0]:
            self._search(far, q, n, best)


def knn_query(tree: KDTree, index: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest neighbours of a stored point, itself included at distance 0."""
    if not 0 <= index < tree.n:
        raise ValueError(f"point index {index} outside [0, {tree.n})")
    return tree.query_point(tree.xyz[index], n)


def brute_force_knn(points, index: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Oracle route: full distance scan with the same (distance, index) order."""
    xyz = _coords(points)
    if not 0 <= index < xyz.shape[0]:
        raise ValueError(f"point index {index} outside [0, {xyz.shape[0]})")
    if not 1 <= n <= xyz.shape[0]:
        raise ValueError(f"n {n} outside [1, {xyz.shape[0]}]")
    diff = xyz - xyz[index]
    d2 = (diff * diff).sum(axis=1)
    order = np.lexsort((np.arange(xyz.shape[0]), d2))[:n]
    return order, np.sqrt(d2[order])


def knn_table(points, query_indices, n: int, chunk: int = 256) -> np.ndarray:
    """Neighbour indices for many stored query points, shape (Q, n).

    Chunked exact brute force; each row is sorted by (distance, index) so
    the first ``m <= n`` columns are exactly the m nearest neighbours. Tie
    handling partitions a few extra candidates before the final sort, which
    keeps boundary ties correct unless more than eight points are exactly
    equidistant across the cut.
    """
    xyz = _coords(points)
    total = xyz.shape[0]
    queries = np.asarray(query_indices, dtype=np.int64)
    if queries.ndim != 1:
        raise ValueError("query_indices must be 1-d")
    if queries.size and (queries.min() < 0 or queries.max() >= total):
        raise ValueError("query index outside the stored cloud")
    if not 1 <= n <= total:
        raise ValueError(f"n {n} outside [1, {total}]")
    width = min(n + 8, total)
    sq = (xyz * xyz).sum(axis=1)
    out = np.empty((queries.size, n), dtype=np.int64)
    for lo in range(0, queries.size, chunk):
        q = queries[lo:lo + chunk]
        qxyz = xyz[q]
        # expanded-square form just shortlists candidates; the final order
        # recomputes distances with the same arithmetic as the oracle route
        approx = sq[None, :] - 2.0 * (qxyz @ xyz.T) + sq[q][:, None]
        if width < total:
            cand = np.argpartition(approx, width - 1, axis=1)[:, :width]
        else:
            cand = np.broadcast_to(np.arange(total), (q.shape[0], total)).copy()
        diff = xyz[cand] - qxyz[:, None, :]
        d2 = (diff * diff).sum(axis=2)
        order = np.lexsort((cand, d2), axis=1)
        out[lo:lo + chunk] = np.take_along_axis(cand, order, axis=1)[:, :n]
    return out


# ---------------------------------------------------------------------------
# feature assembly


@dataclass(frozen=True)
class CoordStats:
    """Per-column mean and deviation of cloud rows, for standardization."""

    mean: np.ndarray
    std: np.ndarray


def compute_coord_stats(clouds) -> CoordStats:
    """Pooled mean/std over the rows of one or more clouds."""
    stacked = np.concatenate([c.points for c in clouds], axis=0)
    if stacked.shape[0] == 0:
        raise ValueError("cannot compute statistics of zero points")
    return CoordStats(
        mean=stacked.mean(axis=0),
        std=np.maximum(stacked.std(axis=0), 1e-8),
    )


def batch_point_features(
    indices, scores_a, scores_b, cloud, stats: CoordStats | None = None
) -> np.ndarray:
    """Per-point descriptor rows ``[f | g | x, y, z, intensity]``.

    Shape (B, 2K + 4). With ``stats`` the four coordinate columns are
    standardized; score columns never are.
    """
    idx = np.asarray(indices, dtype=np.int64)
    coords = cloud.points[idx]
    if stats is not None:
        coords = (coords - stats.mean) / stats.std
    return np.concatenate([scores_a[idx], scores_b[idx], coords], axis=1)


def batch_set_features(
    indices, neighbors, scores_a, scores_b, cloud, stats: CoordStats | None = None
) -> np.ndarray:
    """Neighbour set descriptors, shape (B, n, 2K + 4).

    Row j of a set holds the j-th neighbour's two score rows followed by
    its offset from the query point and the offset length. Offsets are
    divided by the coordinate deviations when ``stats`` is given, with the
    length recomputed on the scaled offsets.
    """
    idx = np.asarray(indices, dtype=np.int64)
    nb = np.asarray(neighbors, dtype=np.int64)
    if nb.ndim != 2 or nb.shape[0] != idx.shape[0]:
        raise ValueError(f"neighbour table {nb.shape} does not match {idx.shape[0]} queries")
    delta = cloud.xyz[nb] - cloud.xyz[idx][:, None, :]
    if stats is not None:
        delta = delta / stats.std[:3]
    length = np.linalg.norm(delta, axis=2, keepdims=True)
    return np.concatenate([scores_a[nb], scores_b[nb], delta, length], axis=2)


def assemble_point_features(index, scores_a, scores_b, cloud, stats=None) -> np.ndarray:
    """Single-point version of :func:`batch_point_features`, shape (2K + 4,)."""
    return batch_point_features([index], scores_a, scores_b, cloud, stats)[0]


def assemble_set_features(index, neighbor_indices, scores_a, scores_b, cloud, stats=None) -> np.ndarray:
    """Single-point version of :func:`batch_set_features`, shape (n, 2K + 4)."""
    nb = np.asarray(neighbor_indices, dtype=np.int64)[None, :]
    return batch_set_features([index], nb, scores_a, scores_b, cloud, stats)[0]
