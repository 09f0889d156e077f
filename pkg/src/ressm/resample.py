"""Sequence compression by resampling onto a uniform time grid.

Each position gets a learned time interval bounded inside
[kappa * delta, delta], the running sum of intervals places the inputs
on a time axis, and a shorter uniform grid is interpolated from the K
nearest inputs of each grid point: their features concatenated with a
Gaussian basis expansion of the signed time differences, mixed by one
linear map.  Decompression copies each original position's value from
its closest grid point.

Neighbor selection and the copy-back argmin are frozen integer routing;
gradients flow through feature values, the mixing map, the basis means,
and the time axes (hence into the interval map).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "ResampleConfig",
    "ResamplePlan",
    "init_resample_config",
    "compression_deltas",
    "build_grid",
    "knn_indices",
    "make_plan",
    "gauss_expand",
    "compress",
    "decompress",
    "closest_grid_index",
    "center_copy_gamma",
    "compress_tracked",
    "decompress_tracked",
]

# Guards the grid length against cases like sum([d]*L) / d landing one ulp
# below an integer when the intervals are all equal.
_GRID_EPS = 1e-9


@dataclass
class ResampleConfig:
    """Weights and hyperparameters of one resampler.

    kappa is the minimum compression rate in (0, 1]; kappa = 1 disables
    compression entirely (every interval equals delta_base), which is the
    ablation switch.  theta_delta maps a feature vector to the interval
    preactivation; theta_gamma mixes the K concatenated
    [features, basis] neighbor blocks back to feature width; mus are the
    learnable basis means.
    """

    kappa: float
    window_k: int
    basis_g: int
    delta_base: float
    theta_delta: np.ndarray
    theta_gamma: np.ndarray
    mus: np.ndarray

    def __post_init__(self):
        self.theta_delta = np.asarray(self.theta_delta, dtype=np.float64).reshape(-1)
        self.theta_gamma = np.asarray(self.theta_gamma, dtype=np.float64)
        self.mus = np.asarray(self.mus, dtype=np.float64).reshape(-1)
        if not (0.0 < self.kappa <= 1.0):
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.delta_base <= 0.0:
            raise ValueError("delta_base must be positive")
        if self.window_k < 1 or self.basis_g < 1:
            raise ValueError("window and basis sizes must be at least 1")
        if len(self.mus) != self.basis_g:
            raise ValueError("mus length must equal basis_g")
        width = len(self.theta_delta)
        want = self.window_k * (width + self.basis_g)
        if self.theta_gamma.shape != (want, width):
            raise ValueError(
                f"theta_gamma must be [{want}, {width}], got {self.theta_gamma.shape}"
            )

    @property
    def width(self) -> int:
        return len(self.theta_delta)


@dataclass
class ResamplePlan:
    """Frozen routing between the source times and the uniform grid."""

    src_times: np.ndarray
    dst_times: np.ndarray
    dst_len: int
    neighbors: np.ndarray | None = None  # [dst_len, K] source indices, time-ordered

    def __post_init__(self):
        self.src_times = np.asarray(self.src_times, dtype=np.float64)
        self.dst_times = np.asarray(self.dst_times, dtype=np.float64)
        if self.dst_len < 1 or self.dst_len > len(self.src_times):
            raise ValueError("dst_len must lie in [1, source length]")
        if self.neighbors is not None:
            self.neighbors = np.asarray(self.neighbors, dtype=np.intp)
            if self.neighbors.min() < 0 or self.neighbors.max() >= len(self.src_times):
                raise ValueError("neighbor index out of range")


def init_resample_config(
    width: int,
    kappa: float,
    window_k: int,
    basis_g: int,
    rng: np.random.Generator,
    delta_base: float = 1.0,
) -> ResampleConfig:
    """Fan-in uniform weights; basis means on an even grid spanning the
    realizable distance range [-K delta, K delta]."""
    gamma_rows = window_k * (width + basis_g)
    return ResampleConfig(
        kappa=kappa,
        window_k=window_k,
        basis_g=basis_g,
        delta_base=delta_base,
        theta_delta=rng.uniform(-1, 1, size=width) / np.sqrt(width),
        theta_gamma=rng.uniform(-1, 1, size=(gamma_rows, width)) / np.sqrt(gamma_rows),
        mus=np.linspace(-window_k * delta_base, window_k * delta_base, basis_g),
    )


def compression_deltas(cfg: ResampleConfig, x: np.ndarray) -> np.ndarray:
    """Per-position intervals sigmoid(theta . x) * delta * (1 - kappa)
    + kappa * delta, strictly inside (kappa delta, delta) for kappa < 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.width:
        raise ValueError(f"expected [L, {cfg.width}] features, got {x.shape}")
    pre = x @ cfg.theta_delta
    sig = np.empty_like(pre)
    pos = pre >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
    e = np.exp(pre[~pos])
    sig[~pos] = e / (1.0 + e)
    return sig * cfg.delta_base * (1.0 - cfg.kappa) + cfg.kappa * cfg.delta_base


def build_grid(deltas: np.ndarray, delta_base: float) -> ResamplePlan:
    """Place sources at cumulative times and lay the uniform grid.

    Grid length is floor(t_L / delta) clamped to at least 1, so the last
    grid point never extrapolates past the sources.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 1 or len(deltas) == 0:
        raise ValueError("deltas must be a non-empty 1-d sequence")
    if np.any(deltas <= 0):
        raise ValueError("all intervals must be strictly positive")
    src_times = np.cumsum(deltas)
    dst_len = max(1, int(np.floor(src_times[-1] / delta_base + _GRID_EPS)))
    dst_len = min(dst_len, len(deltas))
    dst_times = np.arange(1, dst_len + 1) * delta_base
    return ResamplePlan(src_times=src_times, dst_times=dst_times, dst_len=dst_len)


def knn_indices(dst_time: float, src_times: np.ndarray, k: int) -> np.ndarray:
    """The k source indices closest in time, ties toward the lower index,
    returned in ascending time order.  When k exceeds the source count the
    last neighbor repeats to keep the window size fixed.
    """
    src_times = np.asarray(src_times, dtype=np.float64)
    if len(src_times) == 0:
        raise ValueError("source times must be non-empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    dist = np.abs(src_times - dst_time)
    order = np.argsort(dist, kind="stable")  # stable sort: ties keep lower index first
    chosen = np.sort(order[: min(k, len(src_times))])
    if k > len(src_times):
        chosen = np.concatenate([chosen, np.full(k - len(src_times), chosen[-1])])
    return chosen.astype(np.intp)


def make_plan(deltas: np.ndarray, delta_base: float, window_k: int) -> ResamplePlan:
    """Grid plus the frozen neighbor windows for every grid point."""
    plan = build_grid(deltas, delta_base)
    neighbors = np.stack(
        [knn_indices(t, plan.src_times, window_k) for t in plan.dst_times]
    )
    plan.neighbors = neighbors
    return plan


def gauss_expand(d: float, mus: np.ndarray) -> np.ndarray:
    """Encode a signed time difference as exp(-(d - mu_i)^2) per basis mean."""
    mus = np.asarray(mus, dtype=np.float64)
    diff = d - mus
    return np.exp(-diff * diff)


def compress(cfg: ResampleConfig, x: np.ndarray, plan: ResamplePlan) -> np.ndarray:
    """Interpolate each grid point from its neighbor window.

    Row l of the feature matrix is the neighbor blocks in ascending time
    order, each block [x_k, basis(dst_l - t_k)], mixed by theta_gamma.
    """
    x = np.asarray(x, dtype=np.float64)
    if plan.neighbors is None:
        raise ValueError("plan has no neighbor windows; use make_plan")
    if len(x) != len(plan.src_times):
        raise ValueError("sequence length does not match the plan")
    if x.shape[1] != cfg.width:
        raise ValueError(f"expected width {cfg.width}, got {x.shape[1]}")
    xg = x[plan.neighbors]  # [dst_len, K, W]
    d = plan.dst_times[:, None] - plan.src_times[plan.neighbors]  # [dst_len, K]
    diff = d[:, :, None] - cfg.mus[None, None, :]
    eps = np.exp(-diff * diff)  # [dst_len, K, G]
    feats = np.concatenate([xg, eps], axis=2).reshape(plan.dst_len, -1)
    return feats @ cfg.theta_gamma


def closest_grid_index(plan: ResamplePlan) -> np.ndarray:
    """For each source position, the index of the nearest grid point
    (ties toward the lower index)."""
    return np.argmin(
        np.abs(plan.src_times[:, None] - plan.dst_times[None, :]), axis=1
    ).astype(np.intp)


def decompress(y_bar: np.ndarray, plan: ResamplePlan) -> np.ndarray:
    """Copy each original position's value from its closest grid point."""
    y_bar = np.asarray(y_bar, dtype=np.float64)
    if len(y_bar) != plan.dst_len:
        raise ValueError(f"expected {plan.dst_len} rows, got {len(y_bar)}")
    return y_bar[closest_grid_index(plan)]


def center_copy_gamma(width: int, basis_g: int) -> np.ndarray:
    """K = 1 mixing map that copies the neighbor's features and ignores
    the basis block; with an uncompressed grid,
    decompress(compress(x)) == x exactly under this map."""
    gamma = np.zeros((width + basis_g, width))
    gamma[:width, :width] = np.eye(width)
    return gamma


# ---------------------------------------------------------------------------
# tape versions (frozen routing from a plan, differentiable values)


def compress_tracked(
    x_t: ad.Tensor,
    plan: ResamplePlan,
    theta_gamma_t: ad.Tensor,
    mus_t: ad.Tensor,
    src_times_t: ad.Tensor,
    dst_times_t: ad.Tensor,
) -> ad.Tensor:
    """Differentiable compress: gradients reach the inputs, the mixing
    map, the basis means, and both time axes; neighbor windows stay
    frozen integer routing from the plan."""
    if plan.neighbors is None:
        raise ValueError("plan has no neighbor windows; use make_plan")
    n_dst, window_k = plan.neighbors.shape
    basis_g = mus_t.size
    parts = []
    for k in range(window_k):
        idx = plan.neighbors[:, k]
        xk = ad.gather_rows(x_t, idx)
        tk = ad.gather_rows(src_times_t, idx)
        dk = ad.sub(dst_times_t, tk)
        diff = ad.sub(ad.tile_cols(dk, basis_g), ad.tile_rows(mus_t, n_dst))
        eps_k = ad.exp(ad.neg(ad.mul(diff, diff)))
        parts.extend([xk, eps_k])
    feats = ad.concat(parts, axis=1)
    return ad.matmul(feats, theta_gamma_t)


def decompress_tracked(y_bar_t: ad.Tensor, plan: ResamplePlan) -> ad.Tensor:
    """Copy-closest as a gather; the backward pass scatter-adds each
    original position's gradient onto its grid point."""
    return ad.gather_rows(y_bar_t, closest_grid_index(plan))
