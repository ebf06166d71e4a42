"""The trainable point refinement head and its training loop.

The head scores one point from its neighbourhood: a shared dense stack
lifts each neighbour row ``[f_k | g_k | offset, length]`` to a latent
vector, a column-wise max pools the set, and a final affine layer maps the
pooled vector concatenated with the point's own descriptor to class
logits. Everything runs in float64 so gradients can be checked against
central differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .assertion import sample_training_batch, uncertainty_mask
from .dataio import (AugmentRanges, PointCloud, augment_cloud, ignore_id,
                     read_arrays, write_arrays)
from .errors import DataError, DivergenceError
from .neighborhood import (CoordStats, KDTree, batch_point_features,
                           batch_set_features, compute_coord_stats, knn_query,
                           knn_table)
from .nn import (DenseLayer, one_cycle_lr, relu, relu_backward,
                 set_maxpool_batch, set_maxpool_batch_backward,
                 sgd_momentum_step, softmax_cross_entropy)
from .util import rng_for, seed_sequence

# rng branch tags inside a training run
_BRANCH_INIT = 0
_BRANCH_ORDER = 1
_BRANCH_BATCH = 2
_BRANCH_AUGMENT = 3


@dataclass
class Scan:
    """One scan's cloud, labels, and the two per-point score matrices.

    The neighbour table is built lazily at the widest requested ``n`` and
    sliced afterwards, which is exact because neighbour rows are sorted by
    (distance, index).
    """

    cloud: PointCloud
    scores_a: np.ndarray
    scores_b: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    _table: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        n = self.cloud.n
        for nm, sc in (("scores_a", self.scores_a), ("scores_b", self.scores_b)):
            if sc.ndim != 2 or sc.shape[0] != n:
                raise ValueError(f"{nm} shape {sc.shape} does not match {n} points")
        if self.scores_a.shape != self.scores_b.shape:
            raise ValueError("score matrices differ in shape")
        if self.labels is not None and self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} does not match {n} points")

    @property
    def num_classes(self) -> int:
        return self.scores_a.shape[1]

    def neighbor_table(self, n: int) -> np.ndarray:
        if self._table is None or self._table.shape[1] < n:
            self._table = knn_table(self.cloud, np.arange(self.cloud.n), n)
        return self._table[:, :n]


@dataclass(frozen=True)
class HeadTrainConfig:
    """Knobs for one head training run."""

    tau: float = 0.85
    num_neighbors: int = 15
    epochs: int = 20
    batch_size: int = 256
    lr_max: float = 0.05
    momentum: float = 0.9
    warmup_frac: float = 0.3
    start_div: float = 25.0
    end_div: float = 1e4
    hidden: tuple[int, ...] = (64, 64, 64)
    class_weighting: str = "sqrt_inv"
    standardize: bool = False
    augment: AugmentRanges | None = None
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau {self.tau} outside [0, 1]")
        if self.num_neighbors < 1:
            raise ValueError("num_neighbors must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr_max <= 0.0:
            raise ValueError("lr_max must be positive")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.class_weighting not in ("sqrt_inv", "uniform"):
            raise ValueError(f"unknown class weighting {self.class_weighting!r}")


@dataclass
class PointHeadModel:
    """Shared dense stack, set pool, and the output affine layer."""

    layers: list[DenseLayer]
    fc: DenseLayer
    num_classes: int
    num_neighbors: int
    coord_stats: CoordStats | None = None

    @property
    def set_width(self) -> int:
        return self.layers[0].in_size

    @property
    def point_width(self) -> int:
        return self.fc.in_size - self.layers[-1].out_size

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers + [self.fc]:
            out.extend([layer.weights, layer.bias])
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params())


def init_point_head(
    num_classes: int,
    num_neighbors: int,
    hidden: tuple[int, ...] = (64, 64, 64),
    seed=0,
    coord_stats: CoordStats | None = None,
) -> PointHeadModel:
    """Fresh model with uniform Glorot weights and zero biases.

    Both the set rows and the point descriptor are ``2K + 4`` wide, so the
    output layer reads ``hidden[-1] + 2K + 4`` inputs.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    if num_neighbors < 1:
        raise ValueError("num_neighbors must be positive")
    rng = np.random.default_rng(seed)
    width = 2 * num_classes + 4
    layers = []
    fan_in = width
    for h in hidden:
        layers.append(DenseLayer.glorot(fan_in, h, rng))
        fan_in = h
    fc = DenseLayer.glorot(fan_in + width, num_classes, rng)
    return PointHeadModel(layers=layers, fc=fc, num_classes=num_classes,
                          num_neighbors=num_neighbors, coord_stats=coord_stats)


def point_head_logits_batch(model: PointHeadModel, point_feats: np.ndarray,
                            set_feats: np.ndarray):
    """Forward pass over a batch; returns (logits, cache).

    ``point_feats`` is (B, 2K + 4) and ``set_feats`` (B, n, 2K + 4) with n
    matching the model.
    """
    p = np.asarray(point_feats, dtype=np.float64)
    s = np.asarray(set_feats, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != model.point_width:
        raise ValueError(f"point features {p.shape} do not match width {model.point_width}")
    if s.ndim != 3 or s.shape[0] != p.shape[0]:
        raise ValueError(f"set features {s.shape} do not align with {p.shape[0]} points")
    if s.shape[1] != model.num_neighbors or s.shape[2] != model.set_width:
        raise ValueError(
            f"set features {s.shape[1:]} do not match "
            f"({model.num_neighbors}, {model.set_width})"
        )
    b, n, w = s.shape
    x = s.reshape(b * n, w)
    pres, acts = [], []
    for layer in model.layers:
        pre = layer.forward(x)
        x = relu(pre)
        pres.append(pre)
        acts.append(x)
    latent = x.reshape(b, n, model.layers[-1].out_size)
    pooled, arg = set_maxpool_batch(latent)
    combined = np.concatenate([pooled, p], axis=1)
    logits = model.fc.forward(combined)
    return logits, (p, s, pres, acts, arg, combined)


def point_head_forward(model: PointHeadModel, point_feat: np.ndarray,
                       set_feat: np.ndarray) -> np.ndarray:
    """Logits for a single point, shape (K,)."""
    logits, _ = point_head_logits_batch(
        model, np.asarray(point_feat)[None, :], np.asarray(set_feat)[None, :, :]
    )
    return logits[0]


def point_head_loss_and_grads(
    model: PointHeadModel,
    point_feats: np.ndarray,
    set_feats: np.ndarray,
    targets: np.ndarray,
    class_weights: np.ndarray | None = None,
):
    """Mean weighted cross entropy and gradients in :meth:`params` order."""
    logits, cache = point_head_logits_batch(model, point_feats, set_feats)
    loss, dlogits = softmax_cross_entropy(logits, targets, class_weights)
    _, s, pres, acts, arg, combined = cache
    b, n, _ = s.shape
    latent_width = model.layers[-1].out_size

    dcombined, dfc_w, dfc_b = model.fc.backward(combined, dlogits)
    dpooled = dcombined[:, :latent_width]
    dlatent = set_maxpool_batch_backward(arg, dpooled, n)
    dx = dlatent.reshape(b * n, latent_width)

    grads_rev = [dfc_b, dfc_w]
    for i in range(len(model.layers) - 1, -1, -1):
        dx = relu_backward(pres[i], dx)
        inputs = acts[i - 1] if i > 0 else s.reshape(b * n, model.set_width)
        dx, dw, db = model.layers[i].backward(inputs, dx)
        grads_rev.extend([db, dw])
    return loss, grads_rev[::-1]


def sqrt_inverse_class_weights(label_arrays, num_classes: int) -> np.ndarray:
    """Class weights proportional to ``1 / sqrt(frequency)``.

    IGNORE labels are left out of the counts. Absent classes get weight 0;
    present weights are rescaled to mean 1 so the loss scale stays put.
    """
    counts = np.zeros(num_classes, dtype=np.int64)
    for lab in label_arrays:
        lab = np.asarray(lab, dtype=np.int64)
        keep = lab[lab != ignore_id(num_classes)]
        counts += np.bincount(keep, minlength=num_classes)[:num_classes]
    total = counts.sum()
    if total == 0:
        raise ValueError("no labelled points to weight")
    w = np.zeros(num_classes)
    present = counts > 0
    w[present] = 1.0 / np.sqrt(counts[present] / total)
    w[present] /= w[present].mean()
    return w


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


def train_point_head(scans: list[Scan], cfg: HeadTrainConfig):
    """Fit a head on the uncertain points of labelled scans.

    Each epoch visits the scans once in a shuffled order and draws one
    batch of uncertain, non-IGNORE points per scan. Scans without any
    eligible point are skipped with a warning; if no scan has one, that is
    an error. Returns the model and per-epoch (mean loss, lr) stats.
    """
    cfg.validate()
    if not scans:
        raise ValueError("need at least one scan")
    k = scans[0].num_classes
    for scan in scans:
        if scan.num_classes != k:
            raise ValueError("scans disagree on the number of classes")
        if scan.labels is None:
            raise ValueError(f"scan {scan.name!r} has no labels")
        if scan.labels.size and (scan.labels.min() < 0 or scan.labels.max() > ignore_id(k)):
            raise ValueError(f"scan {scan.name!r} labels outside [0, {ignore_id(k)}]")
        if cfg.num_neighbors > scan.cloud.n:
            raise ValueError(
                f"num_neighbors {cfg.num_neighbors} exceeds scan size {scan.cloud.n}"
            )

    stats = compute_coord_stats([s.cloud for s in scans]) if cfg.standardize else None
    model = init_point_head(k, cfg.num_neighbors, cfg.hidden,
                            seed=seed_sequence(cfg.seed, _BRANCH_INIT),
                            coord_stats=stats)
    if cfg.class_weighting == "sqrt_inv":
        weights = sqrt_inverse_class_weights([s.labels for s in scans], k)
    else:
        weights = None

    masks = [uncertainty_mask(s.scores_a, s.scores_b, cfg.tau) for s in scans]
    eligible = [s.labels != ignore_id(k) for s in scans]
    if not any((m.uncertain & e).any() for m, e in zip(masks, eligible)):
        raise DataError("no scan has eligible uncertain points at this tau")

    params = model.params()
    velocities = [np.zeros_like(p) for p in params]
    total_steps = max(cfg.epochs * len(scans), 1)
    order_rng = rng_for(cfg.seed, _BRANCH_ORDER)
    history: list[EpochStats] = []
    warned: set[int] = set()
    step = 0
    lr = 0.0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(scans))
        losses = []
        for scan_idx in order:
            scan = scans[scan_idx]
            pool = masks[scan_idx].uncertain & eligible[scan_idx]
            if not pool.any():
                if scan_idx not in warned:
                    warnings.warn(f"scan {scan.name or scan_idx} has no eligible "
                                  "uncertain points; skipping")
                    warned.add(int(scan_idx))
                continue
            batch = sample_training_batch(
                pool, cfg.batch_size,
                seed_sequence(cfg.seed, _BRANCH_BATCH, epoch, int(scan_idx)),
            )
            cloud = scan.cloud
            table = scan.neighbor_table(cfg.num_neighbors)[batch]
            if cfg.augment is not None:
                aug_rng = rng_for(cfg.seed, _BRANCH_AUGMENT, epoch, int(scan_idx))
                aug = cfg.augment.draw(aug_rng)
                cloud = augment_cloud(scan.cloud, aug, seed=aug_rng)
                if aug.jitter_sigma > 0.0:
                    # jitter moves points independently, so the cached
                    # neighbour rows are stale; the other transforms scale
                    # all distances alike and keep them exact
                    table = knn_table(cloud, batch, cfg.num_neighbors)
            pf = batch_point_features(batch, scan.scores_a, scan.scores_b, cloud, stats)
            sf = batch_set_features(batch, table, scan.scores_a, scan.scores_b, cloud, stats)
            loss, grads = point_head_loss_and_grads(
                model, pf, sf, scan.labels[batch], weights
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at step {step}")
            lr = one_cycle_lr(min(step, total_steps - 1), total_steps, cfg.lr_max,
                              cfg.warmup_frac, cfg.start_div, cfg.end_div)
            sgd_momentum_step(params, grads, velocities, lr, cfg.momentum)
            step += 1
            losses.append(loss)
        if cfg.epochs and not losses:
            raise DataError("every scan was skipped; nothing to train on")
        history.append(EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr))
    return model, history


def predict_uncertain(
    model: PointHeadModel,
    cloud: PointCloud,
    scores_a: np.ndarray,
    scores_b: np.ndarray,
    uncertain: np.ndarray,
    neighbor_table: np.ndarray | None = None,
    chunk: int = 4096,
) -> tuple[np.ndarray, np.ndarray]:
    """Head labels for the flagged points of one scan.

    Returns (point indices, predicted labels); both empty when nothing is
    flagged. Without a precomputed table the neighbours come from a fresh
    KD tree, one query per flagged point.
    """
    flags = np.asarray(getattr(uncertain, "uncertain", uncertain), dtype=bool)
    if flags.shape != (cloud.n,):
        raise ValueError(f"uncertain flags {flags.shape} do not match {cloud.n} points")
    idx = np.nonzero(flags)[0]
    if idx.size == 0:
        return idx, np.empty(0, dtype=np.int64)
    n = model.num_neighbors
    if n > cloud.n:
        raise ValueError(f"model wants {n} neighbours but the scan has {cloud.n} points")
    if scores_a.shape[1] != model.num_classes:
        raise ValueError("score width does not match the model's class count")
    if neighbor_table is not None:
        if neighbor_table.shape[0] != cloud.n or neighbor_table.shape[1] < n:
            raise ValueError(f"neighbour table {neighbor_table.shape} unusable for n={n}")
        rows = np.asarray(neighbor_table[idx, :n], dtype=np.int64)
    else:
        tree = KDTree(cloud)
        rows = np.empty((idx.size, n), dtype=np.int64)
        for j, i in enumerate(idx):
            rows[j] = knn_query(tree, int(i), n)[0]
    labels = np.empty(idx.size, dtype=np.int64)
    for lo in range(0, idx.size, chunk):
        sel = idx[lo:lo + chunk]
        pf = batch_point_features(sel, scores_a, scores_b, cloud, model.coord_stats)
        sf = batch_set_features(sel, rows[lo:lo + chunk], scores_a, scores_b, cloud,
                                model.coord_stats)
        logits, _ = point_head_logits_batch(model, pf, sf)
        labels[lo:lo + chunk] = np.argmax(logits, axis=1)
    return idx, labels


# ---------------------------------------------------------------------------
# checkpoints


def save_point_head(model: PointHeadModel) -> bytes:
    """Serialize architecture, weights, and optional coordinate stats."""
    meta = [model.num_classes, model.num_neighbors, len(model.layers)]
    meta += [layer.out_size for layer in model.layers]
    meta.append(1 if model.coord_stats is not None else 0)
    arrays = [np.asarray(meta, dtype=np.float64)] + model.params()
    if model.coord_stats is not None:
        arrays += [model.coord_stats.mean, model.coord_stats.std]
    return write_arrays(arrays)


def load_point_head(data: bytes) -> PointHeadModel:
    arrays = read_arrays(data)
    if not arrays:
        raise DataError("checkpoint holds no arrays")
    meta = arrays[0]
    if meta.ndim != 1 or meta.size < 4:
        raise DataError("checkpoint meta vector malformed")
    k, n, depth = (int(meta[0]), int(meta[1]), int(meta[2]))
    if k < 1 or n < 1 or depth < 1 or meta.size != depth + 4:
        raise DataError("checkpoint meta vector inconsistent")
    widths = [int(w) for w in meta[3:3 + depth]]
    has_stats = int(meta[3 + depth]) != 0
    expected = 1 + 2 * (depth + 1) + (2 if has_stats else 0)
    if len(arrays) != expected:
        raise DataError(f"checkpoint holds {len(arrays)} arrays, expected {expected}")
    width = 2 * k + 4
    layers = []
    fan_in = width
    pos = 1
    for h in widths:
        w_arr, b_arr = arrays[pos], arrays[pos + 1]
        pos += 2
        if w_arr.shape != (h, fan_in) or b_arr.shape != (h,):
            raise DataError(f"checkpoint layer shape {w_arr.shape} does not match ({h}, {fan_in})")
        layers.append(DenseLayer(w_arr, b_arr))
        fan_in = h
    w_arr, b_arr = arrays[pos], arrays[pos + 1]
    pos += 2
    if w_arr.shape != (k, fan_in + width) or b_arr.shape != (k,):
        raise DataError("checkpoint output layer shape mismatch")
    fc = DenseLayer(w_arr, b_arr)
    stats = None
    if has_stats:
        mean, std = arrays[pos], arrays[pos + 1]
        if mean.shape != (4,) or std.shape != (4,):
            raise DataError("checkpoint coordinate stats malformed")
        stats = CoordStats(mean=mean, std=std)
    return PointHeadModel(layers=layers, fc=fc, num_classes=k, num_neighbors=n,
                          coord_stats=stats)
