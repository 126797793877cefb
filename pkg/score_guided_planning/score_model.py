"""
Noise-conditioned score model trained by denoising score matching.

The network works in normalized coordinates. Noise levels are discrete
tokens ``k = 1..K`` (1-based, largest sigma first). With multiplicative
conditioning every layer's output, the final one included, is multiplied by a
learned per-level vector, so all-zero embeddings give an identically zero
score. With concat conditioning a learned per-level vector is appended to
the input instead.

Planners do not talk to networks directly: they use a ``ScoreOracle``
returning scores in raw coordinates, either ``LearnedScore`` (a ScoreNet
plus the normalization Jacobian) or ``ExactScore`` (the closed-form score of
the perturbed data distribution).
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .adam import (
    AdamState,
    TrainResult,
    adam_step,
    optimizer_arrays,
    optimizer_metadata,
    restore_optimizer,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetConfig, TrainConfig
from .datasets import NormStats, PointSet
from .distance import as_points, exact_score, perturbed_log_likelihood, squared_distances
from .errors import ConfigError, LevelIndexError, ShapeError, TrainingDivergedError
from .mlp import Mlp, forward, mlp_init
from .rng import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: tuple[float, ...]
    kind: str = "geometric"

    @property
    def K(self) -> int:
        return len(self.sigmas)

    def sigma(self, k: int) -> float:
        check_level(k, self.K)
        return self.sigmas[k - 1]

    def to_dict(self) -> dict:
        return {"sigmas": list(self.sigmas), "kind": self.kind}

    @classmethod
    def from_dict(cls, raw: dict) -> "NoiseSchedule":
        return cls(tuple(float(s) for s in raw["sigmas"]), raw.get("kind", "geometric"))


def check_level(k: int, K: int) -> None:
    if not 1 <= int(k) <= K:
        raise LevelIndexError(f"Noise level {k} outside [1, {K}]")


def make_schedule(
    sigma_max: float, sigma_min: float, K: int, kind: str = "geometric"
) -> NoiseSchedule:
    """
    Strictly decreasing noise levels from ``sigma_max`` to ``sigma_min`` (both exact).

    Raises:
        ConfigError: non-positive sigma, K < 1, K = 1 with sigma_max != sigma_min,
            sigma_max <= sigma_min for K > 1, or an unknown kind.
    """
    if kind not in ("geometric", "cosine"):
        raise ConfigError(f"Unknown schedule kind {kind!r} (expected geometric or cosine)")
    if K < 1:
        raise ConfigError(f"A schedule needs K >= 1 levels, got {K}")
    if not sigma_min > 0:
        raise ConfigError(f"sigma_min must be > 0, got {sigma_min}")
    if K == 1:
        if sigma_max != sigma_min:
            raise ConfigError("A single-level schedule needs sigma_max == sigma_min")
        return NoiseSchedule((float(sigma_max),), kind)
    if not sigma_max > sigma_min:
        raise ConfigError(f"sigma_max ({sigma_max}) must exceed sigma_min ({sigma_min})")

    frac = np.arange(K) / (K - 1)
    if kind == "geometric":
        sigmas = sigma_max * (sigma_min / sigma_max) ** frac
    else:
        sigmas = sigma_min + 0.5 * (sigma_max - sigma_min) * (1.0 + np.cos(np.pi * frac))
    sigmas[0], sigmas[-1] = sigma_max, sigma_min
    return NoiseSchedule(tuple(float(s) for s in sigmas), kind)


def level_for_iteration(j: int, K: int, max_iters: int) -> int:
    """Level used at 0-based iteration ``j`` when ``max_iters`` are split evenly over K levels."""
    return min(K, -(-(j + 1) * K // max_iters))


@dataclass(frozen=True)
class ScoreNet:
    trunk: Mlp
    embeddings: tuple[np.ndarray, ...]
    conditioning: str
    schedule: NoiseSchedule
    stats: NormStats | None = None
    scale_output: bool = True

    @property
    def d(self) -> int:
        return self.trunk.output_dim

    def parameters(self) -> list[np.ndarray]:
        return [*self.trunk.parameters(), *self.embeddings]

    def parameter_names(self) -> list[str]:
        return [*self.trunk.parameter_names(), *(f"E{i}" for i in range(len(self.embeddings)))]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "ScoreNet":
        n_trunk = 2 * self.trunk.n_layers
        embeddings = tuple(np.asarray(p, dtype=np.float64) for p in params[n_trunk:])
        trunk = self.trunk.with_parameters(params[:n_trunk])
        return dataclasses.replace(self, trunk=trunk, embeddings=embeddings)


def score_net_init(
    d: int,
    schedule: NoiseSchedule,
    net_cfg: NetConfig | None = None,
    conditioning: str = "multiplicative",
    seed: int = 0,
    stats: NormStats | None = None,
    scale_output: bool = True,
    embed_dim: int = 8,
) -> ScoreNet:
    net_cfg = net_cfg or NetConfig()
    K = schedule.K
    if conditioning == "multiplicative":
        trunk = mlp_init([d, *net_cfg.hidden, d], net_cfg.activation, seed)
        embeddings = tuple(np.ones((K, w)) for w in trunk.widths[1:])
    elif conditioning == "concat":
        trunk = mlp_init([d + embed_dim, *net_cfg.hidden, d], net_cfg.activation, seed)
        embeddings = (make_rng(seed, "embed").standard_normal((K, embed_dim)),)
    else:
        raise ConfigError(
            f"Unknown conditioning {conditioning!r} (expected multiplicative or concat)"
        )
    return ScoreNet(trunk, embeddings, conditioning, schedule, stats, scale_output)


def eval_score(net: ScoreNet, z, k: int, tape: "ad.Tape | None" = None, *, params=None):
    """
    ``s_theta(z; sigma_k)`` for normalized ``z`` of shape ``(..., d)``.

    Raises:
        LevelIndexError: k outside [1, K].
        ShapeError: last dim of z is not d.
    """
    check_level(k, net.schedule.K)
    zv = ad.value_of(z)
    if zv.shape[-1:] != (net.d,):
        raise ShapeError(f"Score net expects dim {net.d}, got shape {zv.shape}")
    if params is None:
        params = tape.bind(net) if tape is not None else net.parameters()
    n_trunk = 2 * net.trunk.n_layers
    trunk_params, embeddings = params[:n_trunk], params[n_trunk:]

    if net.conditioning == "multiplicative":
        gates = [ad.getitem(e, k - 1) for e in embeddings]
        out = forward(net.trunk, z, tape, params=trunk_params, gates=gates)
    else:
        token = ad.getitem(embeddings[0], k - 1)
        token = ad.add(np.zeros(zv.shape[:-1] + (ad.value_of(token).shape[-1],)), token)
        out = forward(net.trunk, ad.concat([z, token], axis=-1), tape, params=trunk_params)
    if net.scale_output:
        out = ad.mul(out, 1.0 / net.schedule.sigma(k))
    return out


def denoising_loss(score, xi: np.ndarray, sigma: float):
    """Batch mean of ``sigma^2 ||score + xi / sigma||^2`` (score evaluated at ``z + sigma xi``)."""
    residual = ad.add(score, xi / sigma)
    return ad.mul(sigma**2, ad.mean(ad.sum(ad.square(residual), axis=-1)))


def dsm_loss(net: ScoreNet, z, k: int, rng: np.random.Generator, tape: "ad.Tape | None" = None):
    """Denoising score-matching loss of a batch ``z`` (normalized) at level k."""
    check_level(k, net.schedule.K)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    sigma = net.schedule.sigma(k)
    xi = rng.standard_normal(z.shape)
    loss = denoising_loss(eval_score(net, z + sigma * xi, k, tape), xi, sigma)
    return loss if tape is not None else float(loss)


def train_score(
    points: PointSet | np.ndarray,
    schedule: NoiseSchedule,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    *,
    seed: int = 0,
    conditioning: str = "multiplicative",
    scale_output: bool = True,
    stats: NormStats | None = None,
    resume: TrainResult | None = None,
) -> TrainResult:
    """
    Fit a ScoreNet to (normalized) ``points``: each step draws a level uniformly,
    a minibatch with replacement and fresh Gaussian noise, then takes one Adam step.

    ``resume`` continues a previous result's model, optimizer and step counter.

    Raises:
        TrainingDivergedError: the loss became NaN or infinite.
    """
    pts = as_points(points)
    N, d = pts.shape
    if resume is not None:
        net, state, start = resume.model, resume.optimizer, resume.step
    else:
        net = score_net_init(d, schedule, net_cfg, conditioning, seed, stats, scale_output)
        state, start = AdamState(lr=train_cfg.lr), 0

    level_rng = make_rng(seed, "level")
    batch_rng = make_rng(seed, "batch")
    noise_rng = make_rng(seed, "noise")
    # Replay the streams up to the resume point so a resumed run matches an uninterrupted one
    for _ in range(start):
        level_rng.integers(1, schedule.K + 1)
        batch_rng.integers(0, N, size=train_cfg.batch_size)
        noise_rng.standard_normal((train_cfg.batch_size, d))

    steps = train_cfg.total_steps(N)
    rows = []
    for step in tqdm(
        range(start + 1, start + steps + 1),
        desc="Training score net",
        disable=not train_cfg.progress,
    ):
        k = int(level_rng.integers(1, schedule.K + 1))
        idx = batch_rng.integers(0, N, size=train_cfg.batch_size)
        tape = ad.Tape()
        loss = dsm_loss(net, pts[idx], k, noise_rng, tape)
        value = float(loss.value)
        if not math.isfinite(value):
            diagnostics = {
                "lr": state.lr,
                "level": k,
                "sigma": schedule.sigma(k),
                "step": step,
                "loss": value,
            }
            raise TrainingDivergedError(
                f"Score training loss became {value} at step {step} (level {k})", diagnostics
            )
        grads = tape.backward(loss).params(net)
        params, state = adam_step(net.parameters(), grads, state)
        net = net.with_parameters(params)
        rows.append((step, k, value))
        if step % train_cfg.log_every == 0:
            logger.debug(f"score step {step}: level={k} loss={value:.5f}")

    log = pd.DataFrame(rows, columns=["step", "level", "loss"])
    return TrainResult(net, log, state, start + steps)


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    return np.sum(a * b, axis=-1) / np.maximum(na * nb, 1e-300)


def _rel_magnitude_error(learned: np.ndarray, exact: np.ndarray) -> np.ndarray:
    ne = np.linalg.norm(exact, axis=-1)
    return np.abs(np.linalg.norm(learned, axis=-1) - ne) / np.maximum(ne, 1e-300)


def validate_against_exact(
    net: ScoreNet,
    points: PointSet | np.ndarray,
    schedule: NoiseSchedule | None = None,
    n_probes: int = 200,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Compare learned and exact scores level by level.

    Near probes are perturbed data ``z + sigma_k xi``; far probes sit between
    3 and 6 sigma_k from a data point and are kept only if every data point is
    more than 3 sigma_k away. Columns: level, sigma, cosine, rel_mag_error,
    far_cosine, far_rel_mag_error, n_far.
    """
    schedule = schedule or net.schedule
    pts = as_points(points)
    N, d = pts.shape
    rng = make_rng(seed, "probe")
    rows = []
    for k, sigma in enumerate(schedule.sigmas, start=1):
        base = pts[rng.integers(0, N, size=n_probes)]
        near = base + sigma * rng.standard_normal(base.shape)
        s_near = eval_score(net, near, k)
        e_near = exact_score(near, pts, sigma)

        direction = rng.standard_normal(base.shape)
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        far = base + direction * rng.uniform(3.0 * sigma, 6.0 * sigma, size=(n_probes, 1))
        far = far[np.min(squared_distances(far, pts), axis=-1) > (3.0 * sigma) ** 2]
        if len(far):
            s_far = eval_score(net, far, k)
            e_far = exact_score(far, pts, sigma)
            far_cos = float(np.mean(_cosine(s_far, e_far)))
            far_mag = float(np.mean(_rel_magnitude_error(s_far, e_far)))
        else:
            far_cos = far_mag = float("nan")
        rows.append(
            {
                "level": k,
                "sigma": sigma,
                "cosine": float(np.mean(_cosine(s_near, e_near))),
                "rel_mag_error": float(np.mean(_rel_magnitude_error(s_near, e_near))),
                "far_cosine": far_cos,
                "far_rel_mag_error": far_mag,
                "n_far": len(far),
            }
        )
    return pd.DataFrame(rows)


class ScoreOracle:
    """Score of the (perturbed) data distribution in raw state-action coordinates."""

    schedule: NoiseSchedule
    stats: NormStats

    @property
    def K(self) -> int:
        return self.schedule.K

    def sigma(self, k: int) -> float:
        return self.schedule.sigma(k)

    def score(self, z_raw: np.ndarray, k: int) -> np.ndarray:
        raise NotImplementedError

    def log_likelihood(self, z_raw: np.ndarray, k: int) -> np.ndarray | None:
        """Log density at ``z_raw``, or None when only the score is known."""
        return None


class LearnedScore(ScoreOracle):
    def __init__(self, net: ScoreNet, stats: NormStats | None = None):
        self.net = net
        self.schedule = net.schedule
        self.stats = stats or net.stats or NormStats.identity(net.d, 0)

    def score(self, z_raw, k):
        zn = self.stats.normalize_z(np.asarray(z_raw, dtype=np.float64))
        return eval_score(self.net, zn, k) / self.stats.z_std


class ExactScore(ScoreOracle):
    """Closed-form score of the data perturbed by sigma_k in normalized space."""

    def __init__(
        self, points: PointSet | np.ndarray, schedule: NoiseSchedule, stats: NormStats | None = None
    ):
        raw = as_points(points)
        self.stats = stats or NormStats.identity(raw.shape[1], 0)
        self.points = self.stats.normalize_z(raw)
        self.schedule = schedule

    def score(self, z_raw, k):
        zn = self.stats.normalize_z(np.asarray(z_raw, dtype=np.float64))
        return exact_score(zn, self.points, self.sigma(k)) / self.stats.z_std

    def log_likelihood(self, z_raw, k):
        zn = self.stats.normalize_z(np.asarray(z_raw, dtype=np.float64))
        log_jacobian = float(np.sum(np.log(self.stats.z_std)))
        return perturbed_log_likelihood(zn, self.points, self.sigma(k)) - log_jacobian


def save_score_net(prefix, result_or_net, *, optimizer: AdamState | None = None, step: int = 0):
    """Checkpoint a ScoreNet (optionally with Adam moments for resuming)."""
    if isinstance(result_or_net, TrainResult):
        net, optimizer, step = result_or_net.model, result_or_net.optimizer, result_or_net.step
    else:
        net = result_or_net
    arrays = list(zip(net.parameter_names(), net.parameters())) + optimizer_arrays(optimizer)
    metadata = {
        "widths": list(net.trunk.widths),
        "activation": net.trunk.activation,
        "conditioning": net.conditioning,
        "scale_output": net.scale_output,
        "schedule": net.schedule.to_dict(),
        "stats": net.stats.to_dict() if net.stats is not None else None,
        "train_step": step,
        "adam": optimizer_metadata(optimizer),
    }
    return save_checkpoint(prefix, "score_net", arrays, metadata)


def load_score_net(prefix) -> TrainResult:
    meta, arrays = load_checkpoint(prefix, kind="score_net")
    widths = meta["widths"]
    trunk = Mlp(
        tuple(widths),
        meta["activation"],
        tuple(arrays[f"W{i}"] for i in range(len(widths) - 1)),
        tuple(arrays[f"b{i}"] for i in range(len(widths) - 1)),
    )
    n_emb = sum(1 for name in arrays if name.startswith("E"))
    stats = NormStats.from_dict(meta["stats"]) if meta.get("stats") else None
    net = ScoreNet(
        trunk,
        tuple(arrays[f"E{i}"] for i in range(n_emb)),
        meta["conditioning"],
        NoiseSchedule.from_dict(meta["schedule"]),
        stats,
        meta.get("scale_output", True),
    )
    optimizer = restore_optimizer(meta.get("adam"), arrays)
    log = pd.DataFrame(columns=["step", "level", "loss"])
    return TrainResult(net, log, optimizer, int(meta.get("train_step", 0)))

