"""Shared fixtures: deterministic toy clouds and score matrices."""
import numpy as np
import pytest

from mvfuse.dataio import PointCloud


def _cloud_from(rng: np.random.Generator, n: int, spread: float) -> PointCloud:
    xyz = rng.uniform(-spread, spread, (n, 3))
    intensity = rng.uniform(0.0, 1.0, (n, 1))
    return PointCloud(np.column_stack([xyz, intensity]))


@pytest.fixture
def make_cloud():
    """Factory for reproducible random clouds: make_cloud(n, seed=0, spread=20)."""
    def make(n: int, seed: int = 0, spread: float = 20.0) -> PointCloud:
        return _cloud_from(np.random.default_rng(seed), n, spread)
    return make


@pytest.fixture
def make_scores():
    """Factory for random valid (N, K) score matrices via a Dirichlet draw."""
    def make(n: int, k: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.dirichlet(np.ones(k), size=n)
    return make


@pytest.fixture
def tiny_cloud() -> PointCloud:
    """Four hand-placed points with distinct pairwise distances."""
    return PointCloud(np.array([
        [0.0, 0.0, 0.0, 0.5],
        [1.0, 0.0, 0.0, 0.1],
        [0.0, 2.0, 0.0, 0.9],
        [4.0, 4.0, 1.0, 0.3],
    ]))
