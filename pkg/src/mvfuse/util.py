"""Small shared helpers: deterministic RNG streams and array checks."""

from __future__ import annotations

import numpy as np


def seed_sequence(root_seed: int, *branch: int) -> np.random.SeedSequence:
    """Build a SeedSequence for a named branch of the run's seed tree.

    Every stochastic stage derives its generator from the root seed plus a
    fixed tuple of integers (stage tag, epoch, scan index, ...), so streams
    are independent and reruns are reproducible regardless of the order in
    which stages execute.
    """
    entropy = [int(root_seed)] + [int(b) for b in branch]
    return np.random.SeedSequence(entropy)


def rng_for(root_seed: int, *branch: int) -> np.random.Generator:
    """Generator for a named branch of the run's seed tree."""
    return np.random.default_rng(seed_sequence(root_seed, *branch))


def derive_seed(root_seed: int, *branch: int) -> int:
    """A plain integer seed for a named branch, for APIs that take ints."""
    return int(seed_sequence(root_seed, *branch).generate_state(1, np.uint64)[0])


def as_float64(a, name: str, shape=None) -> np.ndarray:
    """Coerce to a float64 array, optionally checking the shape."""
    out = np.asarray(a, dtype=np.float64)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {out.shape}")
    return out


def check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite values")
