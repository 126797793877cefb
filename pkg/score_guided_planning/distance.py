"""
Exact distance-to-data oracles over a point set.

Everything here is a brute-force pass over all N points, vectorized with
numpy: the smoothed (softmin) squared distance, the log-likelihood of the
Gaussian-perturbed empirical distribution and its score, Lipschitz-based
error bounds, and annealed descent onto the data. Query points may carry
leading batch dimensions: ``z`` of shape ``(..., d)`` gives results of shape
``(...)`` (or ``(..., d)`` for scores).

The learned ``DistanceRegressor`` amortizes the softmin distance so that
sampling-based planners can query it cheaply.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax
from tqdm import tqdm

from . import autodiff as ad
from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetConfig, TrainConfig
from .datasets import NormStats, PointSet
from .errors import (
    ConfigError,
    DomainError,
    InfiniteSlopeError,
    InternalConsistencyError,
    ShapeError,
    StepSizeError,
    TrainingDivergedError,
)
from .mlp import Mlp, forward, mlp_init
from .rng import make_rng

logger = logging.getLogger(__name__)

_RADICAND_TOLERANCE = 1e-9
_DIRECT_LIMIT = 20_000_000


@dataclass(frozen=True)
class SmoothedDistanceConfig:
    sigma: float
    # None means sigma^2 log N, which makes the distance non-negative
    C: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")

    def offset(self, N: int) -> float:
        return self.sigma**2 * math.log(N) if self.C is None else self.C


def as_points(D) -> np.ndarray:
    """``(N, d)`` array behind a PointSet or array-like; 1-D input is N scalars."""
    pts = D.points if isinstance(D, PointSet) else np.asarray(D, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DomainError("Distance to an empty point set is undefined")
    return pts


def _query(z, d: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if d == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != d:
        raise ShapeError(f"Query dim {z.shape[-1]} does not match data dim {d}")
    return z


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")


def squared_distances(z, D) -> np.ndarray:
    """``||z - z_i||^2`` for every data point, shape ``(..., N)``."""
    pts = as_points(D)
    z = _query(z, pts.shape[1])
    if z.size * len(pts) <= _DIRECT_LIMIT:
        diff = z[..., None, :] - pts
        return np.einsum("...nd,...nd->...n", diff, diff)
    # Large batches: expand the square instead of materializing (..., N, d)
    sq = np.sum(z * z, axis=-1)[..., None] - 2.0 * z @ pts.T + np.sum(pts * pts, axis=-1)
    return np.maximum(sq, 0.0)


def nearest_index(z, D) -> np.ndarray:
    return np.argmin(squared_distances(z, D), axis=-1)


def softmin_distance_sq(z, D, sigma: float, C: float | None = None):
    """
    Smoothed squared distance ``-sigma^2 logsumexp_i(-||z - z_i||^2 / (2 sigma^2)) + C``.

    With the default ``C = sigma^2 log N`` the value is non-negative.

    Raises:
        DomainError: empty point set.
        ConfigError: sigma <= 0.
    """
    _check_sigma(sigma)
    sq = squared_distances(z, D)
    N = sq.shape[-1]
    C = SmoothedDistanceConfig(sigma, C).offset(N)
    value = -(sigma**2) * logsumexp(-sq / (2.0 * sigma**2), axis=-1) + C
    return value if np.ndim(value) else float(value)


def perturbed_log_likelihood(z, D, sigma: float):
    """``log (1/N) sum_i N(z; z_i, sigma^2 I)``."""
    _check_sigma(sigma)
    sq = squared_distances(z, D)
    N = sq.shape[-1]
    d = as_points(D).shape[1]
    log_norm = math.log(N) + 0.5 * d * math.log(2.0 * math.pi * sigma**2)
    value = logsumexp(-sq / (2.0 * sigma**2), axis=-1) - log_norm
    return value if np.ndim(value) else float(value)


def exact_score(z, D, sigma: float) -> np.ndarray:
    """Gradient of ``perturbed_log_likelihood`` in z: ``sum_i w_i (z_i - z) / sigma^2``."""
    _check_sigma(sigma)
    pts = as_points(D)
    z = _query(z, pts.shape[1])
    weights = softmax(-squared_distances(z, pts) / (2.0 * sigma**2), axis=-1)
    return (weights @ pts - z) / sigma**2


def lipschitz_estimate(
    points,
    errors,
    mode: str = "max",
    quantile: float = 0.95,
    inflation: float = 1.1,
) -> float:
    """
    Lipschitz constant of ``e`` from pairwise finite slopes ``|e_i - e_j| / ||z_i - z_j||``.

    ``mode="max"`` takes the largest slope, ``mode="quantile"`` the given top
    quantile; either is multiplied by ``inflation``. Duplicate points with
    equal errors are skipped.

    Raises:
        ConfigError: fewer than two points or an unknown mode.
        InfiniteSlopeError: duplicate points with different errors.
    """
    pts = as_points(points)
    errs = np.asarray(errors, dtype=np.float64).reshape(-1)
    if len(pts) < 2:
        raise ConfigError("Need at least two points to estimate a Lipschitz constant")
    if len(errs) != len(pts):
        raise ShapeError(f"{len(pts)} points but {len(errs)} errors")
    if mode not in ("max", "quantile"):
        raise ConfigError(f"Unknown Lipschitz mode {mode!r} (expected max or quantile)")

    i, j = np.triu_indices(len(pts), k=1)
    dist = np.linalg.norm(pts[i] - pts[j], axis=-1)
    rise = np.abs(errs[i] - errs[j])
    same = dist == 0.0
    if np.any(same & (rise > 0)):
        raise InfiniteSlopeError("Identical points carry different errors; the slope is infinite")
    slopes = rise[~same] / dist[~same]
    if slopes.size == 0:
        return 0.0
    base = slopes.max() if mode == "max" else np.quantile(slopes, quantile)
    return float(inflation * base)


def error_bound(z, D, sigma: float, C: float | None, L_e: float, e_at_nearest):
    """
    Upper bound on model error at ``z``: ``e(x_c) + sqrt(2) L_e sqrt(d^2(z) + C2)``.

    ``C2 = sigma^2 log N - C``. ``e_at_nearest`` is either the error at the
    nearest data point (scalar) or the error at every data point, in which
    case the nearest one is looked up.

    Raises:
        InternalConsistencyError: the radicand is below -1e-9.
    """
    if L_e < 0:
        raise ConfigError(f"L_e must be >= 0, got {L_e}")
    pts = as_points(D)
    N = len(pts)
    C_val = SmoothedDistanceConfig(sigma, C).offset(N)
    radicand = np.asarray(softmin_distance_sq(z, pts, sigma, C_val))
    radicand = radicand + (sigma**2 * math.log(N) - C_val)
    if np.any(radicand < -_RADICAND_TOLERANCE):
        raise InternalConsistencyError(
            f"Negative radicand {float(np.min(radicand)):.3e} in error bound"
        )
    radicand = np.maximum(radicand, 0.0)

    e = np.asarray(e_at_nearest, dtype=np.float64)
    if e.ndim >= 1 and e.shape[-1] == N:
        e = e[nearest_index(z, pts)]
    bound = e + math.sqrt(2.0) * L_e * np.sqrt(radicand)
    return bound if np.ndim(bound) else float(bound)


def _sigmas_of(schedule) -> np.ndarray:
    sigmas = np.asarray(getattr(schedule, "sigmas", schedule), dtype=np.float64).reshape(-1)
    if sigmas.size == 0 or np.any(sigmas <= 0):
        raise ConfigError("Noise levels must be positive")
    if np.any(np.diff(sigmas) >= 0):
        raise ConfigError("Noise schedule must be strictly decreasing")
    return sigmas


def annealed_descent(
    z0,
    D,
    schedule,
    inner_iters: int | None = None,
    step_size: float = 0.5,
    *,
    total_iters: int | None = None,
    score_fn: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Descend the smoothed distance level by level, ``z <- z + h sigma_k^2 s(z; sigma_k)``.

    With the exact score the step is ``h * sum_i w_i (z_i - z)``. ``score_fn(z,
    k)`` (1-based level) substitutes a learned score. ``inner_iters`` defaults
    to ``total_iters / K`` with ``total_iters`` defaulting to ``100 K``.

    Returns:
        (final iterate, index of the nearest data point); batched if ``z0`` is.

    Raises:
        StepSizeError: the smoothed distance at some level grew more than
            tenfold over that level.
    """
    sigmas = _sigmas_of(schedule)
    pts = as_points(D)
    K = len(sigmas)
    if inner_iters is None:
        inner_iters = max(1, (total_iters or 100 * K) // K)

    z = _query(np.array(z0, dtype=np.float64), pts.shape[1])
    for k, sigma in enumerate(sigmas, start=1):
        start = softmin_distance_sq(z, pts, sigma)
        for _ in range(inner_iters):
            score = exact_score(z, pts, sigma) if score_fn is None else np.asarray(score_fn(z, k))
            z = z + step_size * sigma**2 * score
        end = softmin_distance_sq(z, pts, sigma)
        if not np.all(np.isfinite(z)) or np.any(end > 10.0 * start + 1e-12):
            raise StepSizeError(
                f"Annealed descent diverged at level {k} (sigma={sigma:.4g}); reduce step_size"
            )
    return z, nearest_index(z, pts)


def gradient_error_counterexample(
    f: Callable[[np.ndarray], np.ndarray], alpha: float, omega: float, grid: np.ndarray
) -> tuple[float, float]:
    """
    Function error vs derivative error of ``g = f + alpha cos(omega x)``.

    Derivatives are measured with ``np.gradient`` on ``grid`` (which must
    resolve the oscillation), not taken from the closed form.

    Returns:
        (max |g - f|, max |g' - f'|) over the grid.
    """
    grid = np.asarray(grid, dtype=np.float64)
    fx = np.asarray(f(grid), dtype=np.float64)
    gx = fx + alpha * np.cos(omega * grid)
    df = np.gradient(fx, grid)
    dg = np.gradient(gx, grid)
    return float(np.max(np.abs(gx - fx))), float(np.max(np.abs(dg - df)))


@dataclass(frozen=True)
class DistanceRegressor:
    """MLP ``d_eta(z, sigma)`` predicting the softmin squared distance (default offset)."""

    net: Mlp
    sigma_min: float
    sigma_max: float
    low: np.ndarray
    high: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters()

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DistanceRegressor":
        return DistanceRegressor(
            self.net.with_parameters(params), self.sigma_min, self.sigma_max, self.low, self.high
        )


def predict_distance(
    reg: DistanceRegressor, z, sigma, tape: "ad.Tape | None" = None, *, params=None
):
    """
    Predicted distance for ``z`` (``(..., d)``) at noise level(s) ``sigma``.

    With ``tape`` the regressor itself is bound, so gradients are read back
    with ``tape.backward(out).params(reg)``.
    """
    if params is None and tape is not None:
        params = tape.bind(reg)
    zv = ad.value_of(z)
    s = np.broadcast_to(np.asarray(sigma, dtype=np.float64), zv.shape[:-1])[..., None]
    out = forward(reg.net, ad.concat([z, s], axis=-1), tape, params=params)
    return ad.getitem(out, (..., 0))


def train_distance_regressor(
    D,
    schedule,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    margin: float = 0.5,
) -> tuple[DistanceRegressor, pd.DataFrame]:
    """
    Fit a DistanceRegressor by minimizing ``E[(1/sigma^2) |d_eta(z, sigma) - softmin(z, sigma)|]``.

    ``z`` is uniform on the data hull widened by ``margin`` and ``sigma``
    uniform between the schedule's endpoints. Every target needs a full pass
    over D, so training cost grows linearly in N; the log records the time
    spent per logged block of steps alongside N.
    """
    pts = as_points(D)
    N, d = pts.shape
    sigmas = _sigmas_of(schedule)
    sigma_min, sigma_max = float(sigmas.min()), float(sigmas.max())
    low = pts.min(axis=0) - margin
    high = pts.max(axis=0) + margin

    net = mlp_init([d + 1, *net_cfg.hidden, 1], net_cfg.activation, seed)
    reg = DistanceRegressor(net, sigma_min, sigma_max, low, high)
    batch_rng = make_rng(seed, "batch")
    state = AdamState(lr=train_cfg.lr)
    steps = train_cfg.total_steps(N)

    rows = []
    block_start = time.perf_counter()
    running = 0.0
    for step in tqdm(
        range(1, steps + 1), desc="Training distance regressor", disable=not train_cfg.progress
    ):
        z = batch_rng.uniform(low, high, size=(train_cfg.batch_size, d))
        sigma = batch_rng.uniform(sigma_min, sigma_max, size=train_cfg.batch_size)
        s2 = sigma[:, None] ** 2
        lse = logsumexp(-squared_distances(z, pts) / (2.0 * s2), axis=-1)
        target = -s2[:, 0] * lse + s2[:, 0] * math.log(N)

        tape = ad.Tape()
        pred = predict_distance(reg, z, sigma, tape)
        weighted = ad.mul(1.0 / sigma**2, ad.sqrt(ad.add(ad.square(ad.sub(pred, target)), 1e-12)))
        loss = ad.mean(weighted)
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(
                f"Distance regressor loss became {loss_value} at step {step}",
                {"lr": train_cfg.lr, "step": step, "model": "distance"},
            )
        grads = tape.backward(loss).params(reg)
        params, state = adam_step(reg.parameters(), grads, state)
        reg = reg.with_parameters(params)
        running += loss_value

        if step % train_cfg.log_every == 0 or step == steps:
            count = step % train_cfg.log_every or train_cfg.log_every
            elapsed = time.perf_counter() - block_start
            rows.append(
                {"step": step, "loss": running / count, "seconds_per_step": elapsed / count, "N": N}
            )
            logger.debug(
                f"distance step {step}: loss={running / count:.5f} "
                f"({elapsed / count * 1e3:.2f} ms/step, N={N})"
            )
            running = 0.0
            block_start = time.perf_counter()
    return reg, pd.DataFrame(rows, columns=["step", "loss", "seconds_per_step", "N"])


def save_distance_regressor(prefix, reg: DistanceRegressor, stats: NormStats | None = None):
    """Checkpoint a regressor; ``stats`` records the normalization its inputs were trained in."""
    metadata = {
        "widths": list(reg.net.widths),
        "activation": reg.net.activation,
        "sigma_min": reg.sigma_min,
        "sigma_max": reg.sigma_max,
        "low": reg.low.tolist(),
        "high": reg.high.tolist(),
        "stats": stats.to_dict() if stats is not None else None,
    }
    arrays = list(zip(reg.net.parameter_names(), reg.parameters()))
    return save_checkpoint(prefix, "distance", arrays, metadata)


def load_distance_regressor(prefix) -> tuple[DistanceRegressor, NormStats | None]:
    meta, arrays = load_checkpoint(prefix, kind="distance")
    layers = len(meta["widths"]) - 1
    net = Mlp(
        tuple(meta["widths"]),
        meta["activation"],
        tuple(arrays[f"W{i}"] for i in range(layers)),
        tuple(arrays[f"b{i}"] for i in range(layers)),
    )
    reg = DistanceRegressor(
        net, meta["sigma_min"], meta["sigma_max"], np.asarray(meta["low"]), np.asarray(meta["high"])
    )
    return reg, NormStats.from_dict(meta["stats"]) if meta.get("stats") else None
