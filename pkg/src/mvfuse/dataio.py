"""Point cloud containers, binary codecs, synthetic scenes, and score synthesis.

File formats (all little-endian):

* cloud:       ``N x 4`` float32, rows ``x, y, z, intensity``.
* labels:      ``N`` uint32 words; the low 16 bits hold the raw semantic id,
               the high 16 bits are free for instance ids and are ignored here.
* scores:      header ``b"AMVS"``, uint16 version (1), uint16 num_classes,
               uint32 num_points, then ``N x K`` float32 row-major.
* predictions: ``N`` uint32 class ids, no header.

Class ids are contiguous ``0 .. K-1`` after remapping; the value ``K`` is the
internal IGNORE id and never appears in files written by this module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DataError

SCORE_MAGIC = b"AMVS"
SCORE_VERSION = 1
MODEL_MAGIC = b"AMVM"
MODEL_VERSION = 1

# Rows whose sum drifts from 1 by more than this are renormalized on read;
# sums outside [0.99, 1.01] are rejected outright.
ROW_SUM_TOL = 1e-4
ROW_SUM_REJECT = 1e-2


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of LiDAR returns, shape ``(N, 4)`` float64.

    Columns are x, y, z in metres and a sensor intensity in [0, 1]. The
    array is validated as finite on construction; empty clouds are allowed.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"point cloud must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", np.ascontiguousarray(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def planar_radius(self) -> np.ndarray:
        """Distance from the sensor axis in the x-y plane, shape (N,)."""
        return np.hypot(self.points[:, 0], self.points[:, 1])


def ignore_id(num_classes: int) -> int:
    """The internal label used for points excluded from training and scoring."""
    return int(num_classes)


# ---------------------------------------------------------------------------
# binary codecs


def write_point_cloud(cloud: PointCloud) -> bytes:
    return np.asarray(cloud.points, dtype="<f4").tobytes()


def read_point_cloud(data: bytes) -> PointCloud:
    if len(data) % 16 != 0:
        raise DataError(f"cloud payload length {len(data)} is not a multiple of 16")
    flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
    pts = flat.reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise DataError("cloud payload contains non-finite coordinates")
    return PointCloud(pts)


def write_labels(raw_ids: np.ndarray, instance_ids: np.ndarray | None = None) -> bytes:
    """Pack raw semantic ids (and optional instance ids) into uint32 words."""
    raw = np.asarray(raw_ids)
    if raw.ndim != 1:
        raise ValueError("labels must be 1-d")
    if raw.size and (raw.min() < 0 or raw.max() > 0xFFFF):
        raise ValueError("raw semantic ids must fit in 16 bits")
    words = raw.astype(np.uint32)
    if instance_ids is not None:
        inst = np.asarray(instance_ids)
        if inst.shape != raw.shape:
            raise ValueError("instance ids must match label shape")
        words = words | (inst.astype(np.uint32) << np.uint32(16))
    return words.astype("<u4").tobytes()


def read_label_words(data: bytes) -> np.ndarray:
    if len(data) % 4 != 0:
        raise DataError(f"label payload length {len(data)} is not a multiple of 4")
    return np.frombuffer(data, dtype="<u4").copy()


def write_predictions(labels: np.ndarray, num_classes: int) -> bytes:
    lab = np.asarray(labels)
    if lab.ndim != 1:
        raise ValueError("predictions must be 1-d")
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        bad = int(lab[(lab < 0) | (lab >= num_classes)][0])
        raise DataError(
            f"prediction id {bad} outside [0, {num_classes}); "
            "IGNORE must not appear in predictions"
        )
    return lab.astype("<u4").tobytes()


def read_predictions(data: bytes) -> np.ndarray:
    if len(data) % 4 != 0:
        raise DataError(f"prediction payload length {len(data)} is not a multiple of 4")
    return np.frombuffer(data, dtype="<u4").astype(np.int64)


def write_scores(scores: np.ndarray) -> bytes:
    """Serialize an ``(N, K)`` score matrix with the AMVS header."""
    sc = np.asarray(scores, dtype=np.float64)
    if sc.ndim != 2:
        raise ValueError(f"score matrix must be 2-d, got shape {sc.shape}")
    n, k = sc.shape
    if k == 0 or k > 0xFFFF:
        raise ValueError(f"num_classes {k} out of range for the score header")
    if not np.all(np.isfinite(sc)):
        raise ValueError("score matrix contains non-finite values")
    if sc.size and sc.min() < 0.0:
        raise ValueError("score matrix contains negative entries")
    if n and np.abs(sc.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
        raise ValueError("score rows must sum to 1 before writing")
    header = struct.pack("<4sHHI", SCORE_MAGIC, SCORE_VERSION, k, n)
    return header + sc.astype("<f4").tobytes()


def read_scores(data: bytes) -> np.ndarray:
    """Parse an AMVS payload into an ``(N, K)`` float64 matrix.

    Rows are re-normalized only when their sum drifts from 1 by more than
    ``ROW_SUM_TOL``, so a write/read/write cycle of a valid matrix is
    byte-identical. Sums outside [0.99, 1.01] and negative entries are
    rejected as corrupt.
    """
    if len(data) < 12:
        raise DataError("score payload shorter than its 12-byte header")
    magic, version, k, n = struct.unpack_from("<4sHHI", data, 0)
    if magic != SCORE_MAGIC:
        raise DataError(f"bad score magic {magic!r}")
    if version != SCORE_VERSION:
        raise DataError(f"unsupported score version {version}")
    expected = 12 + n * k * 4
    if len(data) != expected:
        raise DataError(f"score payload length {len(data)}, expected {expected}")
    sc = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)
    sc = sc.reshape(n, k)
    if not np.all(np.isfinite(sc)):
        raise DataError("score matrix contains non-finite values")
    if n and k:
        if sc.min() < 0.0:
            raise DataError("score matrix contains negative entries")
        sums = sc.sum(axis=1)
        if np.abs(sums - 1.0).max() > ROW_SUM_REJECT:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise DataError(
                f"score row {bad} sums to {sums[bad]:.6f}, outside [0.99, 1.01]"
            )
        drift = np.abs(sums - 1.0) > ROW_SUM_TOL
        if drift.any():
            sc[drift] /= sums[drift, None]
    return sc


def write_arrays(arrays: Sequence[np.ndarray]) -> bytes:
    """Serialize a list of float64 arrays with the AMVM header.

    Layout: magic, uint16 version, uint32 array count, then per array a
    uint8 ndim, uint32 dims, and the float64 payload in row-major order.
    """
    parts = [struct.pack("<4sHI", MODEL_MAGIC, MODEL_VERSION, len(arrays))]
    for arr in arrays:
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim > 255:
            raise ValueError("array rank too large")
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f8").tobytes())
    return b"".join(parts)


def read_arrays(data: bytes) -> list[np.ndarray]:
    if len(data) < 10:
        raise DataError("model payload shorter than its 10-byte header")
    magic, version, count = struct.unpack_from("<4sHI", data, 0)
    if magic != MODEL_MAGIC:
        raise DataError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION:
        raise DataError(f"unsupported model version {version}")
    offset = 10
    arrays = []
    for i in range(count):
        if offset + 1 > len(data):
            raise DataError(f"model payload truncated before array {i}")
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        if offset + 4 * ndim > len(data):
            raise DataError(f"model payload truncated in array {i} dims")
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        nbytes = size * 8
        if offset + nbytes > len(data):
            raise DataError(f"model payload truncated in array {i} data")
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        arrays.append(arr.reshape(dims).astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{len(data) - offset} trailing bytes after model arrays")
    return arrays


# ---------------------------------------------------------------------------
# label remapping


@dataclass(frozen=True)
class RemapTable:
    """Maps raw 16-bit semantic ids onto contiguous class ids.

    Unlisted raw ids are an error on apply; raw ids mapped to ``-`` in the
    text form become the internal IGNORE id ``num_classes``.
    """

    num_classes: int
    lut: np.ndarray = field(repr=False)

    @classmethod
    def from_pairs(cls, pairs: dict[int, int | None], num_classes: int) -> "RemapTable":
        lut = np.full(0x10000, -1, dtype=np.int32)
        for raw, cid in pairs.items():
            raw = int(raw)
            if not 0 <= raw <= 0xFFFF:
                raise DataError(f"raw id {raw} outside 16-bit range")
            if lut[raw] != -1:
                raise DataError(f"raw id {raw} listed twice in remap table")
            if cid is None:
                lut[raw] = num_classes
            else:
                cid = int(cid)
                if not 0 <= cid < num_classes:
                    raise DataError(
                        f"class id {cid} outside [0, {num_classes}) in remap table"
                    )
                lut[raw] = cid
        return cls(num_classes=int(num_classes), lut=lut)

    @classmethod
    def identity(cls, num_classes: int) -> "RemapTable":
        return cls.from_pairs({i: i for i in range(num_classes)}, num_classes)

    @classmethod
    def from_text(cls, text: str, num_classes: int) -> "RemapTable":
        pairs: dict[int, int | None] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            fields = body.split()
            if len(fields) != 2:
                raise DataError(f"remap line {lineno}: expected 'raw class', got {line!r}")
            try:
                raw = int(fields[0])
            except ValueError:
                raise DataError(f"remap line {lineno}: bad raw id {fields[0]!r}") from None
            if fields[1] == "-":
                cid: int | None = None
            else:
                try:
                    cid = int(fields[1])
                except ValueError:
                    raise DataError(
                        f"remap line {lineno}: bad class id {fields[1]!r}"
                    ) from None
            if raw in pairs:
                raise DataError(f"remap line {lineno}: raw id {raw} listed twice")
            pairs[raw] = cid
        return cls.from_pairs(pairs, num_classes)

    def to_text(self) -> str:
        lines = []
        for raw in np.nonzero(self.lut >= 0)[0]:
            cid = int(self.lut[raw])
            lines.append(f"{raw} {'-' if cid == self.num_classes else cid}")
        return "\n".join(lines) + "\n"

    def apply(self, words: np.ndarray) -> np.ndarray:
        """Map raw label words to class ids, shape preserved, dtype int64."""
        raw = np.asarray(words).astype(np.int64) & 0xFFFF
        mapped = self.lut[raw].astype(np.int64)
        if mapped.size and mapped.min() < 0:
            bad = int(raw[mapped < 0][0])
            raise DataError(f"raw semantic id {bad} missing from remap table")
        return mapped


def read_labels(data: bytes, remap: RemapTable) -> np.ndarray:
    """Decode a label payload and remap it to contiguous class ids."""
    return remap.apply(read_label_words(data))


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class GroundAnnulus:
    """A flat ring of ground points, uniform over the annulus area."""

    class_id: int
    weight: float
    r_min: float
    r_max: float
    z_min: float
    z_max: float
    intensity: tuple[float, float] = (0.05, 0.95)

    def validate(self) -> None:
        if not 0.0 <= self.r_min < self.r_max:
            raise ValueError(f"annulus radii [{self.r_min}, {self.r_max}] invalid")
        if self.z_min > self.z_max:
            raise ValueError("annulus z band inverted")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        r = np.sqrt(rng.uniform(self.r_min**2, self.r_max**2, count))
        ang = rng.uniform(0.0, 2.0 * np.pi, count)
        z = rng.uniform(self.z_min, self.z_max, count)
        inten = rng.uniform(self.intensity[0], self.intensity[1], count)
        return np.column_stack([r * np.cos(ang), r * np.sin(ang), z, inten])


@dataclass(frozen=True)
class BoxCluster:
    """Axis-aligned boxes scattered on a ring around the sensor.

    ``count`` instances are placed at a uniform radius in [r_min, r_max] and
    uniform azimuth; each box spans ``size`` metres and rests at ``z_base``.
    Points are spread evenly across instances (earlier instances absorb any
    remainder) and sampled uniformly inside each box.
    """

    class_id: int
    weight: float
    size: tuple[float, float, float]
    r_min: float
    r_max: float
    z_base: float
    count: int = 1
    intensity: tuple[float, float] = (0.05, 0.95)

    def validate(self) -> None:
        if min(self.size) <= 0.0:
            raise ValueError(f"box size {self.size} must be positive")
        if not 0.0 <= self.r_min <= self.r_max:
            raise ValueError(f"box ring radii [{self.r_min}, {self.r_max}] invalid")
        if self.count < 1:
            raise ValueError("box count must be at least 1")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        per = _split_counts(count, self.count)
        sx, sy, sz = self.size
        pieces = []
        for m in per:
            cr = rng.uniform(self.r_min, self.r_max)
            ca = rng.uniform(0.0, 2.0 * np.pi)
            cx, cy = cr * np.cos(ca), cr * np.sin(ca)
            x = cx + rng.uniform(-0.5 * sx, 0.5 * sx, m)
            y = cy + rng.uniform(-0.5 * sy, 0.5 * sy, m)
            z = self.z_base + rng.uniform(0.0, sz, m)
            inten = rng.uniform(self.intensity[0], self.intensity[1], m)
            pieces.append(np.column_stack([x, y, z, inten]))
        return np.concatenate(pieces, axis=0)


@dataclass(frozen=True)
class VerticalPole:
    """Thin vertical cylinders scattered on a ring around the sensor."""

    class_id: int
    weight: float
    radius: float
    z_min: float
    z_max: float
    r_min: float
    r_max: float
    count: int = 1
    intensity: tuple[float, float] = (0.05, 0.95)

    def validate(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("pole radius must be positive")
        if self.z_min >= self.z_max:
            raise ValueError("pole z extent inverted")
        if not 0.0 <= self.r_min <= self.r_max:
            raise ValueError(f"pole ring radii [{self.r_min}, {self.r_max}] invalid")
        if self.count < 1:
            raise ValueError("pole count must be at least 1")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        per = _split_counts(count, self.count)
        pieces = []
        for m in per:
            cr = rng.uniform(self.r_min, self.r_max)
            ca = rng.uniform(0.0, 2.0 * np.pi)
            cx, cy = cr * np.cos(ca), cr * np.sin(ca)
            rr = self.radius * np.sqrt(rng.random(m))
            ang = rng.uniform(0.0, 2.0 * np.pi, m)
            z = rng.uniform(self.z_min, self.z_max, m)
            inten = rng.uniform(self.intensity[0], self.intensity[1], m)
            pieces.append(
                np.column_stack([cx + rr * np.cos(ang), cy + rr * np.sin(ang), z, inten])
            )
        return np.concatenate(pieces, axis=0)


Primitive = Union[GroundAnnulus, BoxCluster, VerticalPole]


def _split_counts(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


@dataclass(frozen=True)
class SceneConfig:
    """Recipe for one synthetic scan: primitives, budget, class count, seed."""

    seed: int
    num_points: int
    num_classes: int
    primitives: tuple[Primitive, ...]

    def validate(self) -> None:
        if self.num_points < 1:
            raise ValueError("num_points must be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        for prim in self.primitives:
            if not 0 <= prim.class_id < self.num_classes:
                raise ValueError(
                    f"primitive class id {prim.class_id} outside [0, {self.num_classes})"
                )
            if not prim.weight > 0.0:
                raise ValueError("primitive weights must be positive")
            prim.validate()


def allocate_points(weights: Sequence[float], total: int) -> np.ndarray:
    """Split ``total`` points across weights, largest-remainder rounding.

    Floor of the exact share first; leftover points go to the largest
    fractional parts, earlier entries winning ties. Sums exactly to total.
    """
    w = np.asarray(weights, dtype=np.float64)
    exact = w / w.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        frac = exact - counts
        order = np.lexsort((np.arange(len(w)), -frac))
        counts[order[:short]] += 1
    return counts


def generate_synthetic_scene(cfg: SceneConfig) -> tuple[PointCloud, np.ndarray]:
    """Sample one labelled scan from a scene recipe.

    Primitives are drawn in listed order from a single generator seeded with
    ``cfg.seed``, then the rows are shuffled so class runs do not survive in
    point order. Returns the cloud and int64 class labels.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    counts = allocate_points([p.weight for p in cfg.primitives], cfg.num_points)
    blocks = []
    labels = []
    for prim, m in zip(cfg.primitives, counts):
        if m == 0:
            continue
        pts = prim.sample(rng, int(m))
        blocks.append(pts)
        labels.append(np.full(int(m), prim.class_id, dtype=np.int64))
    pts = np.concatenate(blocks, axis=0)
    lab = np.concatenate(labels)
    perm = rng.permutation(cfg.num_points)
    return PointCloud(pts[perm]), lab[perm]


# ---------------------------------------------------------------------------
# synthetic scorers


@dataclass(frozen=True)
class ScorerProfile:
    """Behaviour of one imperfect view scorer.

    ``base_accuracy`` is the chance a point survives the range-independent
    error draw. ``range_curve`` adds distance-dependent error probability as
    piecewise-linear (radius, extra) knots, flat beyond the ends.
    ``confusions`` are (src, dst, prob) class swaps applied before the range
    draw, so per-class accuracy drops on exactly the listed source classes.
    Correct rows and confusion swaps are sharpened with ``temperature``;
    range-driven mistakes use ``error_temperature`` when set, so they can
    render softer or stay indistinguishable from confident rows.
    ``temperature_jitter`` scales every row's temperature by a uniform
    log-space factor in ``exp(+-jitter)``, independent of row correctness,
    which spreads row confidence without leaking where the errors are.
    """

    base_accuracy: float
    temperature: float = 0.25
    error_temperature: float | None = None
    range_curve: tuple[tuple[float, float], ...] = ()
    confusions: tuple[tuple[int, int, float], ...] = ()
    temperature_jitter: float = 0.0

    def validate(self, num_classes: int) -> None:
        if not 0.0 < self.base_accuracy <= 1.0:
            raise ValueError(f"base_accuracy {self.base_accuracy} outside (0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.error_temperature is not None and self.error_temperature <= 0.0:
            raise ValueError("error_temperature must be positive")
        if self.temperature_jitter < 0.0:
            raise ValueError("temperature_jitter must be non-negative")
        radii = [r for r, _ in self.range_curve]
        if any(r < 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("range_curve radii must be non-negative and increasing")
        if any(e < 0 for _, e in self.range_curve):
            raise ValueError("range_curve extra error must be non-negative")
        totals = np.zeros(num_classes)
        for src, dst, prob in self.confusions:
            if not (0 <= src < num_classes and 0 <= dst < num_classes):
                raise ValueError(f"confusion pair ({src}, {dst}) outside class range")
            if src == dst:
                raise ValueError("confusion source and destination must differ")
            if not 0.0 < prob <= 1.0:
                raise ValueError(f"confusion probability {prob} outside (0, 1]")
            totals[src] += prob
        if (totals > 1.0 + 1e-9).any():
            bad = int(np.argmax(totals))
            raise ValueError(f"confusion probabilities for class {bad} exceed 1")


# Peak logit separation before temperature scaling. Noise stays below half
# of it so the argmax always lands on the drawn target class.
_LOGIT_MARGIN = 1.0


def synthetic_scorer(
    cloud: PointCloud,
    labels: np.ndarray,
    num_classes: int,
    profile: ScorerProfile,
    seed,
) -> np.ndarray:
    """Produce an ``(N, K)`` softmax score matrix imitating a view scorer.

    Each point draws a target class: a profile confusion, else a uniform
    wrong class with probability ``1 - base_accuracy`` plus the range curve
    extra, else the true label. Logits put a unit margin on the target with
    sub-margin uniform noise elsewhere, then a per-row temperature softmax,
    so the row argmax always equals the drawn target class.

    All random draws happen up front in a fixed order, so two profiles that
    share a seed see identical draws and their outputs differ only where the
    profiles themselves differ.
    """
    profile.validate(num_classes)
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (cloud.n,):
        raise ValueError(f"labels shape {lab.shape} does not match cloud ({cloud.n},)")
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise ValueError("labels outside class range; scorers expect no IGNORE points")
    n, k = cloud.n, int(num_classes)

    rng = np.random.default_rng(seed)
    u_conf = rng.random(n)
    u_err = rng.random(n)
    u_alt = rng.random(n)
    noise = rng.random((n, k))
    u_temp = rng.random(n)

    conf_total = np.zeros(k)
    for src, _, prob in profile.confusions:
        conf_total[src] += prob
    conf_mask = u_conf < conf_total[lab]

    target = lab.copy()
    for src in sorted({s for s, _, _ in profile.confusions}):
        entries = [(d, p) for s, d, p in profile.confusions if s == src]
        rows = np.nonzero((lab == src) & conf_mask)[0]
        if rows.size == 0:
            continue
        dsts = np.array([d for d, _ in entries], dtype=np.int64)
        cum = np.cumsum([p for _, p in entries]) / conf_total[src]
        pick = np.searchsorted(cum, u_conf[rows] / conf_total[src], side="right")
        target[rows] = dsts[np.minimum(pick, len(dsts) - 1)]

    extra = np.zeros(n)
    if profile.range_curve:
        knots_r = np.array([r for r, _ in profile.range_curve])
        knots_e = np.array([e for _, e in profile.range_curve])
        extra = np.interp(cloud.planar_radius(), knots_r, knots_e)
    p_err = np.clip((1.0 - profile.base_accuracy) + extra, 0.0, 1.0)
    err_mask = ~conf_mask & (u_err < p_err)
    if k > 1:
        alt = np.minimum((u_alt * (k - 1)).astype(np.int64), k - 2)
        wrong = alt + (alt >= lab)
        target[err_mask] = wrong[err_mask]
    else:
        err_mask = np.zeros(n, dtype=bool)

    logits = 0.5 * _LOGIT_MARGIN * noise
    logits[np.arange(n), target] += _LOGIT_MARGIN
    t_err = profile.error_temperature or profile.temperature
    temp = np.where(err_mask, t_err, profile.temperature)
    if profile.temperature_jitter > 0.0:
        temp = temp * np.exp((2.0 * u_temp - 1.0) * profile.temperature_jitter)
    return softmax_rows(logits / temp[:, None])


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stable row softmax of a 2-d array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    """One concrete augmentation: scale, axis flips, yaw, then jitter."""

    scale: float = 1.0
    flip_x: bool = False
    flip_y: bool = False
    yaw: float = 0.0
    jitter_sigma: float = 0.0

    def validate(self) -> None:
        for name in ("scale", "yaw", "jitter_sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"augmentation {name} must be finite")
        if self.scale <= 0.0:
            raise ValueError("augmentation scale must be positive")
        if self.jitter_sigma < 0.0:
            raise ValueError("jitter sigma must be non-negative")


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling ranges for per-epoch augmentation draws."""

    scale: tuple[float, float] = (0.95, 1.05)
    flip_prob: float = 0.5
    yaw: tuple[float, float] = (-np.pi, np.pi)
    jitter_sigma: float = 0.0

    def draw(self, rng: np.random.Generator) -> AugmentParams:
        return AugmentParams(
            scale=float(rng.uniform(*self.scale)),
            flip_x=bool(rng.random() < self.flip_prob),
            flip_y=bool(rng.random() < self.flip_prob),
            yaw=float(rng.uniform(*self.yaw)),
            jitter_sigma=self.jitter_sigma,
        )


def augment_cloud(cloud: PointCloud, params: AugmentParams, seed=None) -> PointCloud:
    """Apply scale, x/y flips, yaw rotation, then Gaussian jitter.

    Identity parameters return coordinates bit-identical to the input. The
    seed only matters when ``jitter_sigma > 0``.
    """
    params.validate()
    xyz = cloud.xyz.copy()
    if params.scale != 1.0:
        xyz *= params.scale
    if params.flip_x:
        xyz[:, 0] = -xyz[:, 0]
    if params.flip_y:
        xyz[:, 1] = -xyz[:, 1]
    if params.yaw != 0.0:
        c, s = np.cos(params.yaw), np.sin(params.yaw)
        x, y = xyz[:, 0].copy(), xyz[:, 1].copy()
        xyz[:, 0] = c * x - s * y
        xyz[:, 1] = s * x + c * y
    if params.jitter_sigma > 0.0:
        rng = np.random.default_rng(seed)
        xyz += rng.normal(0.0, params.jitter_sigma, xyz.shape)
    return PointCloud(np.column_stack([xyz, cloud.intensity]))
