"""
Transition datasets, normalization and the ``.sgpd`` file format.

``.sgpd`` layout (all little-endian)::

    offset 0   4 bytes   magic "SGPD"
    offset 4   u32       version (1)
    offset 8   u32       n  (state dim)
    offset 12  u32       m  (action dim)
    offset 16  u64       N  (transitions)
    offset 24  f64[N, n + m + n]   rows of (state, action, next_state)
"""

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from .environments import Env, Region
from .errors import ConfigError, DomainError, FormatError, ShapeError
from .rng import make_rng

logger = logging.getLogger(__name__)

MAGIC = b"SGPD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
STD_FLOOR = 1e-8
_STATS_FIELDS = ("state_mean", "state_std", "action_mean", "action_std")


@dataclass(frozen=True)
class TransitionDataset:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.float64)
        next_states = np.asarray(self.next_states, dtype=np.float64)
        if actions.ndim == 1 and actions.size == 0:
            actions = actions.reshape(len(states), 0)
        if states.ndim != 2 or actions.ndim != 2 or next_states.ndim != 2:
            raise ShapeError("states, actions and next_states must be 2-D arrays")
        if not (len(states) == len(actions) == len(next_states)):
            raise ShapeError(
                f"Row counts differ: states {len(states)}, actions {len(actions)}, "
                f"next_states {len(next_states)}"
            )
        if states.shape[1] != next_states.shape[1]:
            raise ShapeError(
                f"State dim {states.shape[1]} != next-state dim {next_states.shape[1]}"
            )
        for name, arr in (("states", states), ("actions", actions), ("next_states", next_states)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"Dataset {name} contain non-finite values")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "next_states", next_states)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.actions.shape[1]

    @property
    def N(self) -> int:
        return self.states.shape[0]

    def subset(self, idx: np.ndarray) -> "TransitionDataset":
        return TransitionDataset(self.states[idx], self.actions[idx], self.next_states[idx])

    def point_set(self) -> "PointSet":
        return PointSet(np.concatenate([self.states, self.actions], axis=1), self.n, self.m)


@dataclass(frozen=True)
class PointSet:
    """State-action points ``z_i = (x_i, u_i)``; the support of the empirical distribution."""

    points: np.ndarray
    n: int
    m: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 1:
            raise DomainError("A point set needs at least one point")
        if pts.shape[1] != self.n + self.m:
            raise ShapeError(f"Point dim {pts.shape[1]} != n + m = {self.n + self.m}")
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return self.n + self.m

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_array(cls, points) -> "PointSet":
        """Point set with no state/action split; a 1-D array is N points in one dimension."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise DomainError("A point set needs at least one point")
        return cls(pts, pts.shape[1], 0)


@dataclass(frozen=True)
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray

    @property
    def z_mean(self) -> np.ndarray:
        return np.concatenate([self.state_mean, self.action_mean])

    @property
    def z_std(self) -> np.ndarray:
        return np.concatenate([self.state_std, self.action_std])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in _STATS_FIELDS}

    @classmethod
    def from_dict(cls, raw: dict) -> "NormStats":
        return cls(*(np.asarray(raw[k], dtype=np.float64) for k in _STATS_FIELDS))

    @classmethod
    def identity(cls, n: int, m: int) -> "NormStats":
        return cls(np.zeros(n), np.ones(n), np.zeros(m), np.ones(m))

    def normalize_z(self, z):
        return (z - self.z_mean) / self.z_std

    def denormalize_z(self, z):
        return z * self.z_std + self.z_mean


def _floored_std(values: np.ndarray, label: str) -> np.ndarray:
    std = values.std(axis=0) if len(values) else np.ones(values.shape[1])
    low = std < STD_FLOOR
    if np.any(low):
        logger.warning(
            f"{label} dimension(s) {np.flatnonzero(low).tolist()} have ~zero variance; "
            f"std floored at {STD_FLOOR}"
        )
        std = np.where(low, STD_FLOOR, std)
    return std


def compute_stats(dataset: TransitionDataset) -> NormStats:
    """Per-dimension mean and population std of states and actions."""
    return NormStats(
        state_mean=dataset.states.mean(axis=0),
        state_std=_floored_std(dataset.states, "State"),
        action_mean=dataset.actions.mean(axis=0) if dataset.m else np.zeros(0),
        action_std=_floored_std(dataset.actions, "Action") if dataset.m else np.ones(0),
    )


def _check_dims(dataset: TransitionDataset, stats: NormStats) -> None:
    if stats.state_mean.shape != (dataset.n,) or stats.action_mean.shape != (dataset.m,):
        raise ShapeError(
            f"Stats for n={stats.state_mean.size}, m={stats.action_mean.size} "
            f"do not match dataset n={dataset.n}, m={dataset.m}"
        )


def normalize(dataset: TransitionDataset, stats: NormStats) -> TransitionDataset:
    _check_dims(dataset, stats)
    return TransitionDataset(
        (dataset.states - stats.state_mean) / stats.state_std,
        (dataset.actions - stats.action_mean) / stats.action_std,
        (dataset.next_states - stats.state_mean) / stats.state_std,
    )


def denormalize(dataset: TransitionDataset, stats: NormStats) -> TransitionDataset:
    _check_dims(dataset, stats)
    return TransitionDataset(
        dataset.states * stats.state_std + stats.state_mean,
        dataset.actions * stats.action_std + stats.action_mean,
        dataset.next_states * stats.state_std + stats.state_mean,
    )


def save(dataset: TransitionDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.concatenate([dataset.states, dataset.actions, dataset.next_states], axis=1)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dataset.n, dataset.m, dataset.N))
        f.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())
    os.replace(tmp, path)
    logger.info(f"Wrote {dataset.N} transitions (n={dataset.n}, m={dataset.m}) to {path}")
    return path


def load(path: str | os.PathLike) -> TransitionDataset:
    """
    Read a ``.sgpd`` file.

    Raises:
        FileNotFoundError: the file does not exist
        FormatError: bad magic, unsupported version, truncated or oversized payload
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path} is too short for an .sgpd header", offset=len(raw))
    magic, version, n, m, N = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path} is not an .sgpd file (magic {magic!r})", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported .sgpd version {version} in {path}", offset=4)
    row_width = n + m + n
    expected = _HEADER.size + N * row_width * 8
    if len(raw) < expected:
        raise FormatError(
            f"{path} is truncated: expected {expected} bytes, found {len(raw)}", offset=len(raw)
        )
    if len(raw) > expected:
        raise FormatError(
            f"{path} has {len(raw) - expected} unexpected trailing bytes", offset=expected
        )
    rows = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    rows = rows.reshape(N, row_width)
    try:
        return TransitionDataset(rows[:, :n], rows[:, n : n + m], rows[:, n + m :])
    except DomainError as e:
        raise FormatError(f"{path}: {e}", offset=_HEADER.size) from e


def to_csv(dataset: TransitionDataset, path: str | os.PathLike) -> Path:
    """Export with header ``x0..x{n-1},u0..u{m-1},xp0..xp{n-1}``."""
    columns = (
        [f"x{i}" for i in range(dataset.n)]
        + [f"u{j}" for j in range(dataset.m)]
        + [f"xp{i}" for i in range(dataset.n)]
    )
    rows = np.concatenate([dataset.states, dataset.actions, dataset.next_states], axis=1)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return Path(path)


def collect_random(
    env: Env,
    N: int,
    seed: int,
    region: Region | None = None,
    *,
    progress: bool = False,
    chunk: int = 10_000,
) -> TransitionDataset:
    """
    Uniform random transitions from the true dynamics of ``env``.

    States are i.i.d. uniform over ``region`` (default: the environment's data
    region), actions i.i.d. uniform over its action box.

    Raises:
        ConfigError: N < 1, or the region leaves the environment's state domain.
    """
    if N < 1:
        raise ConfigError(f"Number of transitions must be >= 1, got {N}")
    region = region or env.data_region
    if not region.box.within(env.latent_state_box):
        raise ConfigError(
            f"Data region {region.box} is not inside the {env.spec.name} state domain"
        )

    rng = make_rng(seed, "data")
    latent_x = region.sample(rng, N)
    latent_u = env.latent_action_box.sample(rng, N)

    states, actions, next_states = [], [], []
    starts = range(0, N, chunk)
    desc = f"Collecting {env.spec.name} transitions"
    for start in tqdm(starts, desc=desc, unit="chunk", disable=not progress):
        x = env.encode_state(latent_x[start : start + chunk])
        u = env.encode_action(latent_u[start : start + chunk])
        states.append(x)
        actions.append(u)
        next_states.append(env.step(x, u))
    return TransitionDataset(
        np.concatenate(states), np.concatenate(actions), np.concatenate(next_states)
    )
