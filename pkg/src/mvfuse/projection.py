"""Projection geometry between point clouds and 2-d view grids.

Both views share one convention: each point maps to at most one cell, each
occupied cell elects the closest in-bounds point (ties broken by the lowest
point index) as its representative, and per-cell scores transfer back to
every point that landed in the cell.

Range view columns sweep azimuth, with yaw ``+pi`` at column 0 and ``-pi``
at the right edge. Rows cover either elevation angle between two fields of
view (spherical mode) or a fixed height band (cylindrical mode), row 0 at
the top. Bird's-eye view bins planar radius against azimuth.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dataio import PointCloud
from .errors import DataError

RANGE_IMAGE_MAGIC = b"AMVI"
RANGE_IMAGE_VERSION = 1
RANGE_IMAGE_CHANNELS = 6  # x, y, z, intensity, range, occupancy

EMPTY_CELL = -1


@dataclass(frozen=True)
class RVConfig:
    """Range view geometry. Angles are radians; mode picks the row rule."""

    height: int
    width: int
    mode: str = "spherical"
    fov_up: float = np.deg2rad(3.0)
    fov_down: float = np.deg2rad(-25.0)
    z_min: float = -3.0
    z_max: float = 2.0

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid {self.height}x{self.width} must be positive")
        if self.mode not in ("spherical", "cylindrical"):
            raise ValueError(f"unknown range view mode {self.mode!r}")
        if self.mode == "spherical" and not self.fov_up > self.fov_down:
            raise ValueError("fov_up must exceed fov_down")
        if self.mode == "cylindrical" and not self.z_max > self.z_min:
            raise ValueError("z_max must exceed z_min")

    @classmethod
    def from_degrees(cls, height, width, mode="spherical", fov_up=3.0, fov_down=-25.0,
                     z_min=-3.0, z_max=2.0) -> "RVConfig":
        return cls(height=height, width=width, mode=mode,
                   fov_up=float(np.deg2rad(fov_up)), fov_down=float(np.deg2rad(fov_down)),
                   z_min=z_min, z_max=z_max)


@dataclass(frozen=True)
class BEVConfig:
    """Polar bird's-eye grid: radial rings by azimuth sectors, one z band."""

    r_bins: int
    theta_bins: int
    r_max: float
    z_min: float = -3.0
    z_max: float = 2.0

    def validate(self) -> None:
        if self.r_bins < 1 or self.theta_bins < 1:
            raise ValueError("bin counts must be positive")
        if self.r_max <= 0.0:
            raise ValueError("r_max must be positive")
        if self.z_max <= self.z_min:
            raise ValueError("z_max must exceed z_min")


@dataclass(frozen=True)
class ProjectionIndex:
    """Where each point landed on a grid, plus per-cell representatives.

    ``rows``/``cols`` are -1 for out-of-bounds points. ``representative``
    holds the elected point index per cell or ``EMPTY_CELL``. ``depth`` is
    the distance used for the election (3-d range for the range view,
    planar radius for the bird's-eye view).
    """

    shape: tuple[int, int]
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    in_bounds: np.ndarray = field(repr=False)
    representative: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)

    @property
    def num_points(self) -> int:
        return self.rows.shape[0]

    def occupancy(self) -> np.ndarray:
        """Boolean (H, W) mask of occupied cells."""
        return self.representative >= 0


def _elect_representatives(shape, rows, cols, in_bounds, depth) -> np.ndarray:
    rep = np.full(shape, EMPTY_CELL, dtype=np.int64)
    idx = np.nonzero(in_bounds)[0]
    if idx.size == 0:
        return rep
    flat = rows[idx] * shape[1] + cols[idx]
    order = np.lexsort((idx, depth[idx]))
    flat_sorted = flat[order]
    uniq, first = np.unique(flat_sorted, return_index=True)
    rep.ravel()[uniq] = idx[order][first]
    return rep


def azimuth_column(yaw: np.ndarray, width: int) -> np.ndarray:
    """Map yaw in (-pi, pi] to an integer column, left edge at +pi."""
    col = np.floor(0.5 * (1.0 - yaw / np.pi) * width).astype(np.int64)
    return np.clip(col, 0, width - 1)


def project_rv(cloud: PointCloud, cfg: RVConfig) -> ProjectionIndex:
    """Project a cloud onto the range view grid.

    Points at exactly zero range have no direction and stay out of bounds;
    every other point is clamped into the frame so the in-bounds set is
    identical for both row modes.
    """
    cfg.validate()
    xyz = cloud.xyz
    rng = np.linalg.norm(xyz, axis=1)
    ok = rng > 0.0
    rows = np.full(cloud.n, EMPTY_CELL, dtype=np.int64)
    cols = np.full(cloud.n, EMPTY_CELL, dtype=np.int64)
    if ok.any():
        yaw = np.arctan2(xyz[ok, 1], xyz[ok, 0])
        cols[ok] = azimuth_column(yaw, cfg.width)
        if cfg.mode == "spherical":
            pitch = np.arcsin(np.clip(xyz[ok, 2] / rng[ok], -1.0, 1.0))
            v = (pitch - cfg.fov_down) / (cfg.fov_up - cfg.fov_down)
        else:
            v = (xyz[ok, 2] - cfg.z_min) / (cfg.z_max - cfg.z_min)
        r = np.floor((1.0 - v) * cfg.height).astype(np.int64)
        rows[ok] = np.clip(r, 0, cfg.height - 1)
    shape = (cfg.height, cfg.width)
    rep = _elect_representatives(shape, rows, cols, ok, rng)
    return ProjectionIndex(shape=shape, rows=rows, cols=cols, in_bounds=ok,
                           representative=rep, depth=rng)


def project_bev(cloud: PointCloud, cfg: BEVConfig) -> ProjectionIndex:
    """Project a cloud onto the polar bird's-eye grid.

    A point is in bounds when its planar radius is below ``r_max`` and its
    height falls in ``[z_min, z_max)``. Radial and angular bins are half
    open on the far side; azimuth 0 starts sector 0 and increases counter
    clockwise.
    """
    cfg.validate()
    xyz = cloud.xyz
    r = np.hypot(xyz[:, 0], xyz[:, 1])
    ok = (r < cfg.r_max) & (xyz[:, 2] >= cfg.z_min) & (xyz[:, 2] < cfg.z_max)
    rows = np.full(cloud.n, EMPTY_CELL, dtype=np.int64)
    cols = np.full(cloud.n, EMPTY_CELL, dtype=np.int64)
    if ok.any():
        rows[ok] = np.minimum(
            (r[ok] / (cfg.r_max / cfg.r_bins)).astype(np.int64), cfg.r_bins - 1
        )
        theta = np.arctan2(xyz[ok, 1], xyz[ok, 0])
        theta = np.where(theta < 0.0, theta + 2.0 * np.pi, theta)
        cols[ok] = np.minimum(
            (theta / (2.0 * np.pi / cfg.theta_bins)).astype(np.int64),
            cfg.theta_bins - 1,
        )
    shape = (cfg.r_bins, cfg.theta_bins)
    rep = _elect_representatives(shape, rows, cols, ok, r)
    return ProjectionIndex(shape=shape, rows=rows, cols=cols, in_bounds=ok,
                           representative=rep, depth=r)


def gather_cell_scores_to_points(cell_scores: np.ndarray, index: ProjectionIndex) -> np.ndarray:
    """Copy each point's cell score row back to the point.

    Out-of-bounds points receive the uniform row ``1/K``, keeping every row
    a valid distribution.
    """
    cs = np.asarray(cell_scores, dtype=np.float64)
    if cs.ndim != 3 or cs.shape[:2] != index.shape:
        raise ValueError(f"cell scores {cs.shape} do not match grid {index.shape}")
    k = cs.shape[2]
    out = np.full((index.num_points, k), 1.0 / k)
    ok = index.in_bounds
    out[ok] = cs[index.rows[ok], index.cols[ok]]
    return out


def scatter_scores_to_cells(point_scores: np.ndarray, index: ProjectionIndex) -> np.ndarray:
    """Fill each occupied cell with its representative point's score row.

    Empty cells get the uniform row ``1/K``.
    """
    ps = np.asarray(point_scores, dtype=np.float64)
    if ps.ndim != 2 or ps.shape[0] != index.num_points:
        raise ValueError(
            f"point scores {ps.shape} do not match {index.num_points} projected points"
        )
    k = ps.shape[1]
    out = np.full(index.shape + (k,), 1.0 / k)
    occupied = index.occupancy()
    out[occupied] = ps[index.representative[occupied]]
    return out


def build_range_image(cloud: PointCloud, index: ProjectionIndex) -> np.ndarray:
    """Render the representative features per cell, shape (H, W, 6).

    Channels are x, y, z, intensity, range, occupancy; empty cells are all
    zero with occupancy 0.
    """
    h, w = index.shape
    img = np.zeros((h, w, RANGE_IMAGE_CHANNELS))
    occupied = index.occupancy()
    rep = index.representative[occupied]
    img[occupied, :4] = cloud.points[rep]
    img[occupied, 4] = index.depth[rep]
    img[occupied, 5] = 1.0
    return img


def write_range_image(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"range image must be 3-d, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("range image contains non-finite values")
    h, w, c = img.shape
    header = struct.pack("<4sHIII", RANGE_IMAGE_MAGIC, RANGE_IMAGE_VERSION, h, w, c)
    return header + img.astype("<f4").tobytes()


def read_range_image(data: bytes) -> np.ndarray:
    if len(data) < 18:
        raise DataError("range image payload shorter than its 18-byte header")
    magic, version, h, w, c = struct.unpack_from("<4sHIII", data, 0)
    if magic != RANGE_IMAGE_MAGIC:
        raise DataError(f"bad range image magic {magic!r}")
    if version != RANGE_IMAGE_VERSION:
        raise DataError(f"unsupported range image version {version}")
    expected = 18 + h * w * c * 4
    if len(data) != expected:
        raise DataError(f"range image length {len(data)}, expected {expected}")
    img = np.frombuffer(data, dtype="<f4", offset=18).astype(np.float64)
    return img.reshape(h, w, c)
