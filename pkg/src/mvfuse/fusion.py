"""Late fusion of two per-point score matrices.

Points where the views agree take the geometric mean of their score rows;
points flagged by the agreement check are re-scored by the trained head.
The element-wise arithmetic mean and maximum are provided as baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assertion import UncertaintyMask, uncertainty_mask
from .dataio import PointCloud
from .pointhead import PointHeadModel, predict_uncertain

SOURCE_ENSEMBLE = 0
SOURCE_HEAD = 1


def _renormalize(rows: np.ndarray) -> np.ndarray:
    sums = rows.sum(axis=1, keepdims=True)
    k = rows.shape[1]
    out = np.full_like(rows, 1.0 / k)
    np.divide(rows, sums, out=out, where=sums > 0.0)
    return out


def _pair(scores_a, scores_b):
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"score matrices must share a 2-d shape, got {a.shape} and {b.shape}")
    if a.size and (a.min() < 0.0 or b.min() < 0.0):
        raise ValueError("score matrices contain negative entries")
    return a, b


def combine_geometric(scores_a: np.ndarray, scores_b: np.ndarray) -> np.ndarray:
    """Row-normalized element-wise ``sqrt(f * g)``.

    A row that zeroes out entirely (disjoint support) falls back to the
    uniform distribution.
    """
    a, b = _pair(scores_a, scores_b)
    return _renormalize(np.sqrt(a * b))


def combine_arithmetic(scores_a: np.ndarray, scores_b: np.ndarray) -> np.ndarray:
    """Row-normalized element-wise mean ``(f + g) / 2``."""
    a, b = _pair(scores_a, scores_b)
    return _renormalize(0.5 * (a + b))


def combine_max(scores_a: np.ndarray, scores_b: np.ndarray) -> np.ndarray:
    """Row-normalized element-wise maximum."""
    a, b = _pair(scores_a, scores_b)
    return _renormalize(np.maximum(a, b))


@dataclass(frozen=True)
class FusionResult:
    """Final labels plus which stage produced each of them."""

    labels: np.ndarray = field(repr=False)
    source: np.ndarray = field(repr=False)
    mask: UncertaintyMask
    combined_scores: np.ndarray = field(repr=False)

    @property
    def num_points(self) -> int:
        return self.labels.shape[0]


def fuse_predictions(
    cloud: PointCloud,
    scores_a: np.ndarray,
    scores_b: np.ndarray,
    tau: float,
    model: PointHeadModel | None = None,
    neighbor_table: np.ndarray | None = None,
) -> FusionResult:
    """Produce one label per point from two score matrices.

    Every point starts from the argmax of the geometric mean; when a model
    is given, the points at or below the agreement threshold are replaced
    by head predictions and tagged ``SOURCE_HEAD``. Without a model the
    ensemble answer stands everywhere (useful as a baseline and for
    ``tau = 0`` style runs).
    """
    a, b = _pair(scores_a, scores_b)
    if a.shape[0] != cloud.n:
        raise ValueError(f"scores cover {a.shape[0]} points but the cloud has {cloud.n}")
    mask = uncertainty_mask(a, b, tau)
    combined = combine_geometric(a, b)
    labels = np.argmax(combined, axis=1).astype(np.int64)
    source = np.zeros(cloud.n, dtype=np.uint8)
    if model is not None:
        idx, head_labels = predict_uncertain(
            model, cloud, a, b, mask.uncertain, neighbor_table
        )
        labels[idx] = head_labels
        source[idx] = SOURCE_HEAD
    return FusionResult(labels=labels, source=source, mask=mask, combined_scores=combined)
