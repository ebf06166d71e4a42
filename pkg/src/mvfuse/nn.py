"""Dense network building blocks in float64 numpy.

Everything here is explicit forward/backward pairs so gradients can be
checked against central finite differences. Weight matrices are stored
``(out, in)`` and act on row vectors or batches of rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


@dataclass
class DenseLayer:
    """Affine map ``y = x W^T + b`` with weights (out, in), bias (out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}"
            )

    @classmethod
    def glorot(cls, in_size: int, out_size: int, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (in_size + out_size))
        return cls(rng.uniform(-limit, limit, (out_size, in_size)), np.zeros(out_size))

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias

    def backward(self, x: np.ndarray, dy: np.ndarray):
        """Given inputs and output gradients (both 2-d), return
        (dx, dweights, dbias)."""
        return dy @ self.weights, dy.T @ x, dy.sum(axis=0)

    def parameter_count(self) -> int:
        return self.weights.size + self.bias.size


def set_maxpool(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise max over the rows of one set, with winner rows.

    The lowest winning row index is kept on ties, making the pool and its
    backward route deterministic.
    """
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError(f"set must be (n, d) with n >= 1, got {m.shape}")
    arg = np.argmax(m, axis=0)
    return m[arg, np.arange(m.shape[1])], arg


def set_maxpool_batch(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched pool over (B, n, d) sets; returns (B, d) values and winners."""
    m = np.asarray(rows, dtype=np.float64)
    if m.ndim != 3 or m.shape[1] == 0:
        raise ValueError(f"sets must be (B, n, d) with n >= 1, got {m.shape}")
    arg = np.argmax(m, axis=1)
    b = np.arange(m.shape[0])[:, None]
    return m[b, arg, np.arange(m.shape[2])[None, :]], arg


def set_maxpool_batch_backward(arg: np.ndarray, d_pooled: np.ndarray, set_size: int) -> np.ndarray:
    """Route pooled gradients back to the winning rows, (B, n, d)."""
    b, d = d_pooled.shape
    out = np.zeros((b, set_size, d))
    out[np.arange(b)[:, None], arg, np.arange(d)[None, :]] = d_pooled
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray,
    targets: np.ndarray,
    class_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean weighted cross entropy over a batch, with logit gradients.

    Per sample: ``w_t * (logsumexp(logits) - logits[t])``; the mean divides
    by the batch size, weighted or not.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if z.ndim != 2 or t.shape != (z.shape[0],):
        raise ValueError(f"logits {z.shape} and targets {t.shape} mismatch")
    if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
        raise ValueError("target outside class range")
    b = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    w = np.ones(b) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[t]
    loss = float((w * (lse - z[np.arange(b), t])).mean())
    p = softmax_rows(z)
    p[np.arange(b), t] -= 1.0
    return loss, p * w[:, None] / b


def dice_loss(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Soft set-overlap loss over a batch of probability rows.

    One minus the mean per-class overlap ratio, smoothed by 1 in both the
    numerator and denominator. Returns the loss and its gradient with
    respect to the probabilities.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if p.ndim != 2 or t.shape != (p.shape[0],):
        raise ValueError(f"probs {p.shape} and targets {t.shape} mismatch")
    b, k = p.shape
    y = np.zeros((b, k))
    y[np.arange(b), t] = 1.0
    num = 2.0 * (p * y).sum(axis=0) + 1.0
    den = p.sum(axis=0) + y.sum(axis=0) + 1.0
    loss = float(1.0 - (num / den).mean())
    dprobs = -(2.0 * y * den - num) / (den * den) / k
    return loss, dprobs


# ---------------------------------------------------------------------------
# recurrent cell and row-major map scans


@dataclass
class GRUCell:
    """Gated recurrent cell; gates computed as ``W x + U h + b``.

    The state update is ``h' = (1 - z) * c + z * h``, so with all
    parameters zero the cell halves its previous state.
    """

    w_r: np.ndarray
    u_r: np.ndarray
    b_r: np.ndarray
    w_z: np.ndarray
    u_z: np.ndarray
    b_z: np.ndarray
    w_c: np.ndarray
    u_c: np.ndarray
    b_c: np.ndarray

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GRUCell":
        k = 1.0 / np.sqrt(hidden_size)
        def w():
            return rng.uniform(-k, k, (hidden_size, input_size))
        def u():
            return rng.uniform(-k, k, (hidden_size, hidden_size))
        def b():
            return rng.uniform(-k, k, hidden_size)
        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b())

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "GRUCell":
        w = lambda: np.zeros((hidden_size, input_size))
        u = lambda: np.zeros((hidden_size, hidden_size))
        b = lambda: np.zeros(hidden_size)
        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b())

    @property
    def hidden_size(self) -> int:
        return self.b_r.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_r.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w_r, self.u_r, self.b_r, self.w_z, self.u_z, self.b_z,
                self.w_c, self.u_c, self.b_c]


def gru_cell_forward(cell: GRUCell, x: np.ndarray, h: np.ndarray):
    """One cell step; returns the next state and a backward cache."""
    r = sigmoid(cell.w_r @ x + cell.u_r @ h + cell.b_r)
    z = sigmoid(cell.w_z @ x + cell.u_z @ h + cell.b_z)
    rh = r * h
    c = np.tanh(cell.w_c @ x + cell.u_c @ rh + cell.b_c)
    h_next = (1.0 - z) * c + z * h
    return h_next, (x, h, r, z, rh, c)


def gru_cell_backward(cell: GRUCell, cache, dh_next: np.ndarray, grads: list[np.ndarray]):
    """Backpropagate one step, accumulating into ``grads`` (9 arrays in
    :meth:`GRUCell.params` order). Returns (dx, dh_prev)."""
    x, h, r, z, rh, c = cache
    dz = dh_next * (h - c)
    dc = dh_next * (1.0 - z)
    dh = dh_next * z
    dc_pre = dc * (1.0 - c * c)
    grads[6] += np.outer(dc_pre, x)
    grads[7] += np.outer(dc_pre, rh)
    grads[8] += dc_pre
    dx = cell.w_c.T @ dc_pre
    drh = cell.u_c.T @ dc_pre
    dh += drh * r
    dr = drh * h
    dr_pre = dr * r * (1.0 - r)
    grads[0] += np.outer(dr_pre, x)
    grads[1] += np.outer(dr_pre, h)
    grads[2] += dr_pre
    dx += cell.w_r.T @ dr_pre
    dh += cell.u_r.T @ dr_pre
    dz_pre = dz * z * (1.0 - z)
    grads[3] += np.outer(dz_pre, x)
    grads[4] += np.outer(dz_pre, h)
    grads[5] += dz_pre
    dx += cell.w_z.T @ dz_pre
    dh += cell.u_z.T @ dz_pre
    return dx, dh


def flatten_feature_map(feature_map: np.ndarray, pad: int) -> np.ndarray:
    """Serialize an (H, W, C) map row-major with a circular row prefix.

    Every row is preceded by copies of its last ``pad`` columns, so a
    left-to-right scan of the ``H * (W + pad)`` cells sees each row's tail
    before its true first column (the columns wrap around in azimuth).
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got {fm.shape}")
    h, w, c = fm.shape
    if not 0 <= pad <= w:
        raise ValueError(f"pad must lie in [0, {w}], got {pad}")
    if pad:
        fm = np.concatenate([fm[:, w - pad:], fm], axis=1)
    return fm.reshape(h * (w + pad), c).copy()


def unflatten_feature_map(cells: np.ndarray, height: int, width: int, pad: int) -> np.ndarray:
    """Inverse of :func:`flatten_feature_map`; the prefix cells are dropped."""
    arr = np.asarray(cells, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != height * (width + pad):
        raise ValueError(
            f"cell array {arr.shape} does not match {height}x({width}+{pad}) layout"
        )
    return arr.reshape(height, width + pad, arr.shape[1])[:, pad:].copy()


def gru_scan(cell: GRUCell, feature_map: np.ndarray, pad: int, h0: np.ndarray | None = None):
    """Run the cell over a flattened map as one sequence.

    The state persists across rows; each row's prefix cells replay its tail
    columns so the state is already warm when the true first column
    arrives. The output map holds the state emitted at each non-prefix
    cell. The hidden size must match the channel count. Returns
    (output_map, cache).
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got {fm.shape}")
    h, w, c = fm.shape
    if cell.hidden_size != c or cell.input_size != c:
        raise ValueError(
            f"cell sizes ({cell.input_size} -> {cell.hidden_size}) must equal channels {c}"
        )
    cells = flatten_feature_map(fm, pad)
    state = np.zeros(c) if h0 is None else np.asarray(h0, dtype=np.float64)
    outputs = np.empty_like(cells)
    caches = []
    for i in range(cells.shape[0]):
        state, step_cache = gru_cell_forward(cell, cells[i], state)
        outputs[i] = state
        caches.append(step_cache)
    return unflatten_feature_map(outputs, h, w, pad), (h, w, pad, caches)


def gru_scan_backward(cell: GRUCell, cache, d_output_map: np.ndarray):
    """Backpropagate through a scan; returns (d_feature_map, grads).

    Prefix-cell outputs were dropped in the forward pass, so they carry no
    upstream gradient, but the gradient reaching their inputs flows back
    into the tail columns they copied.
    """
    h, w, pad, caches = cache
    d_map = np.asarray(d_output_map, dtype=np.float64)
    if d_map.shape != (h, w, cell.hidden_size):
        raise ValueError(
            f"output gradient {d_map.shape} does not match ({h}, {w}, {cell.hidden_size})"
        )
    padded = np.zeros((h, w + pad, cell.hidden_size))
    padded[:, pad:] = d_map
    d_out = padded.reshape(h * (w + pad), cell.hidden_size)
    grads = [np.zeros_like(p) for p in cell.params()]
    d_cells = np.zeros_like(d_out)
    dh = np.zeros(cell.hidden_size)
    for i in range(len(caches) - 1, -1, -1):
        dx, dh = gru_cell_backward(cell, caches[i], d_out[i] + dh, grads)
        d_cells[i] = dx
    d_full = d_cells.reshape(h, w + pad, cell.hidden_size)
    d_fm = d_full[:, pad:].copy()
    if pad:
        d_fm[:, w - pad:] += d_full[:, :pad]
    return d_fm, grads


# ---------------------------------------------------------------------------
# optimization


def one_cycle_lr(
    step: int,
    total_steps: int,
    lr_max: float,
    warmup_frac: float = 0.3,
    start_div: float = 25.0,
    end_div: float = 1e4,
) -> float:
    """Single-cycle schedule: linear warmup to ``lr_max``, cosine decay.

    The peak lands exactly on step ``floor(warmup_frac * total)`` and the
    final step returns exactly ``lr_max / end_div``.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if lr_max <= 0:
        raise ValueError("lr_max must be positive")
    if total_steps == 1:
        return lr_max
    peak = int(np.floor(warmup_frac * total_steps))
    peak = min(peak, total_steps - 1)
    if step <= peak and peak > 0:
        t = step / peak
        return lr_max / start_div * (1.0 - t) + lr_max * t
    span = max(total_steps - 1 - peak, 1)
    t = (step - peak) / span
    lr_end = lr_max / end_div
    return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + np.cos(np.pi * t))


@dataclass
class TrainState:
    """Progress and schedule knobs for one optimization run."""

    total_steps: int
    lr_max: float
    warmup_frac: float = 0.3
    start_div: float = 25.0
    end_div: float = 1e4
    momentum: float = 0.9
    step: int = 0

    def lr(self) -> float:
        return one_cycle_lr(
            min(self.step, self.total_steps - 1),
            self.total_steps,
            self.lr_max,
            self.warmup_frac,
            self.start_div,
            self.end_div,
        )


def sgd_momentum_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    velocities: list[np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> None:
    """In-place heavy-ball update: ``v = m v + g``, ``p -= lr v``.

    Non-finite gradients abort with :class:`DivergenceError`.
    """
    if not len(params) == len(grads) == len(velocities):
        raise ValueError("params, grads, velocities must align")
    for p, g, v in zip(params, grads, velocities):
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient; reduce the learning rate")
        v *= momentum
        v += g
        p -= lr * v


def finite_difference_grad(loss_fn, arrays: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` in the given arrays.

    ``loss_fn`` must read the arrays in place; each element is perturbed by
    ``+-eps`` and restored.
    """
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = loss_fn()
            flat[i] = keep - eps
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * eps)
        out.append(g)
    return out


def relative_grad_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    """Relative L2 gap between two gradient sets, pooled over all arrays."""
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
