"""Cross-view agreement checks and uncertain point selection.

Two score rows for the same point agree when their cosine similarity is
high. Points whose similarity falls at or below a threshold ``tau`` are
flagged uncertain and routed to the point refinement head; everyone else
keeps the ensemble result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _validate_scores(mat: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(mat, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    if m.size and m.min() < 0.0:
        raise ValueError(f"{name} contains negative entries")
    return m


def cosine_similarity(f: np.ndarray, g: np.ndarray) -> float:
    """Cosine of the angle between two non-negative score rows, in [0, 1].

    A zero row has no direction and scores 0 against anything.
    """
    fv = np.asarray(f, dtype=np.float64)
    gv = np.asarray(g, dtype=np.float64)
    if fv.ndim != 1 or gv.ndim != 1 or fv.shape != gv.shape:
        raise ValueError(f"score rows must be 1-d and equal length, got {fv.shape} and {gv.shape}")
    if fv.size == 0:
        raise ValueError("score rows must be non-empty")
    if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(gv))):
        raise ValueError("score rows contain non-finite values")
    if fv.min() < 0.0 or gv.min() < 0.0:
        raise ValueError("score rows contain negative entries")
    denom = np.linalg.norm(fv) * np.linalg.norm(gv)
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(fv, gv) / denom, 0.0, 1.0))


def similarity_rows(scores_a: np.ndarray, scores_b: np.ndarray) -> np.ndarray:
    """Per-point cosine similarity between two (N, K) score matrices."""
    a = _validate_scores(scores_a, "scores_a")
    b = _validate_scores(scores_b, "scores_b")
    if a.shape != b.shape:
        raise ValueError(f"score matrices differ in shape: {a.shape} vs {b.shape}")
    dots = np.einsum("ij,ij->i", a, b)
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    sim = np.zeros(a.shape[0])
    np.divide(dots, denom, out=sim, where=denom > 0.0)
    return np.clip(sim, 0.0, 1.0)


@dataclass(frozen=True)
class UncertaintyMask:
    """Similarity values and the uncertain flags they imply at one tau."""

    tau: float
    similarity: np.ndarray = field(repr=False)
    uncertain: np.ndarray = field(repr=False)

    @property
    def num_points(self) -> int:
        return self.similarity.shape[0]

    @property
    def num_uncertain(self) -> int:
        return int(self.uncertain.sum())

    @property
    def fraction(self) -> float:
        if self.num_points == 0:
            return 0.0
        return self.num_uncertain / self.num_points


def uncertainty_mask(scores_a: np.ndarray, scores_b: np.ndarray, tau: float) -> UncertaintyMask:
    """Flag points whose cross-view similarity is at or below ``tau``.

    Similarities are clipped to [0, 1], so ``tau = 1`` flags every point
    and ``tau = 0`` flags only rows with exactly orthogonal support.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau {tau} outside [0, 1]")
    sim = similarity_rows(scores_a, scores_b)
    return UncertaintyMask(tau=float(tau), similarity=sim, uncertain=sim <= tau)


def similarity_histogram(similarity, bins: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Histogram similarities over [0, 1] into upper-edge-inclusive bins.

    Bin ``i`` covers ``(edges[i], edges[i+1]]`` with the first bin also
    holding 0.0, matching the inclusive threshold rule of
    :func:`uncertainty_mask`. Accepts a raw similarity vector or an
    :class:`UncertaintyMask`. Returns (counts, edges) with ``bins`` counts
    and ``bins + 1`` edges.
    """
    sim = np.asarray(getattr(similarity, "similarity", similarity), dtype=np.float64)
    if bins < 1:
        raise ValueError("need at least one bin")
    if sim.size and (sim.min() < 0.0 or sim.max() > 1.0):
        raise ValueError("similarities outside [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, sim, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return counts.astype(np.int64), edges


def sample_training_batch(
    mask: UncertaintyMask | np.ndarray,
    batch_size: int,
    seed,
    eligible: np.ndarray | None = None,
) -> np.ndarray:
    """Draw point indices for one training step from the uncertain pool.

    ``eligible`` can veto points (IGNORE labels, for instance). The draw is
    without replacement when the pool covers the batch, with replacement
    otherwise; an empty pool is an error.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    flags = mask.uncertain if isinstance(mask, UncertaintyMask) else np.asarray(mask, dtype=bool)
    if eligible is not None:
        elig = np.asarray(eligible, dtype=bool)
        if elig.shape != flags.shape:
            raise ValueError("eligible mask shape does not match uncertain flags")
        flags = flags & elig
    pool = np.nonzero(flags)[0]
    if pool.size == 0:
        raise ValueError("no eligible uncertain points to sample")
    rng = np.random.default_rng(seed)
    return rng.choice(pool, size=batch_size, replace=pool.size < batch_size)
