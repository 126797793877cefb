"""
Shared environment interface: boxes, data regions, trajectory rewards and the registry.

Each ground-truth system (``cartpole``, ``pit``, ``pixel``) subclasses ``Env``
and supplies a true ``step``, an ``EnvSpec``, a reward and a default data
region. Environments that observe something other than their latent state
(the pixel integrator) override the ``encode_*``/``decode_state`` hooks; for
the others they are identities.

Rewards are evaluated by the same code on numpy arrays (single trajectories
or batches with a leading population axis) and on tape variables, so one
definition serves gradient planners, CEM and cost reporting.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Box:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.shape != high.shape:
            raise ShapeError(f"Box bounds differ in shape: {low.shape} vs {high.shape}")
        if np.any(high <= low):
            raise ConfigError(f"Degenerate box: low={low.tolist()} high={high.tolist()}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.low) & (x <= self.high), axis=-1)

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.low, self.high)

    def within(self, other: "Box") -> bool:
        return bool(np.all(self.low >= other.low) and np.all(self.high <= other.high))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(count, self.dim))


@dataclass(frozen=True)
class Region:
    """A box minus zero or more open balls ``(center, radius)``."""

    box: Box
    holes: tuple[tuple[tuple[float, ...], float], ...] = ()

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        inside = self.box.contains(x)
        for center, radius in self.holes:
            inside &= np.linalg.norm(x - np.asarray(center), axis=-1) >= radius
        return inside

    def sample(self, rng: np.random.Generator, count: int, max_rounds: int = 1000) -> np.ndarray:
        """Uniform samples by rejection; deterministic for a given generator state."""
        accepted: list[np.ndarray] = []
        have = 0
        for _ in range(max_rounds):
            if have >= count:
                break
            batch = self.box.sample(rng, max(count - have, 64) * 2)
            batch = batch[self.contains(batch)]
            accepted.append(batch)
            have += len(batch)
        if have < count:
            raise ConfigError("Sampling region is (nearly) empty; holes cover the box")
        return np.concatenate(accepted)[:count]


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n: int
    m: int
    action_box: Box
    state_box: Box
    episode_length: int
    cost: str = ""

    def __post_init__(self):
        if self.action_box.dim != self.m or self.state_box.dim != self.n:
            raise ShapeError(f"{self.name}: box dimensions do not match n={self.n}, m={self.m}")
        if self.episode_length < 1:
            raise ConfigError(f"{self.name}: episode length must be >= 1")


def _at(seq, t: int):
    """Element ``t`` of a trajectory given as a list of rows or an array with time on axis -2."""
    if isinstance(seq, (list, tuple)):
        return seq[t]
    return seq[..., t, :]


def _horizon(u_seq) -> int:
    if isinstance(u_seq, (list, tuple)):
        return len(u_seq)
    return ad.value_of(u_seq).shape[-2]


class TrajectoryReward:
    """Sum of ``running(t, x_t, u_t)`` for t < T plus ``terminal(x_T)``; larger is better."""

    def running(self, t: int, x, u):
        raise NotImplementedError

    def terminal(self, x):
        raise NotImplementedError

    def total(self, x_seq, u_seq):
        T = _horizon(u_seq)
        acc = self.terminal(_at(x_seq, T))
        for t in range(T):
            acc = ad.add(acc, self.running(t, _at(x_seq, t), _at(u_seq, t)))
        return acc

    def cost(self, x_seq, u_seq) -> float:
        return -float(np.sum(ad.value_of(self.total(x_seq, u_seq))))


class ZeroReward(TrajectoryReward):
    """Reward that is identically zero (pure data-likelihood objective)."""

    def running(self, t, x, u):
        return ad.mul(ad.sum(x, axis=-1), 0.0)

    def terminal(self, x):
        return ad.mul(ad.sum(x, axis=-1), 0.0)


@dataclass
class QuadraticReward(TrajectoryReward):
    """Negative weighted squared distance to ``goal`` plus a control penalty.

    ``q``, ``r`` and ``q_terminal`` are diagonal weights; a zero vector switches a term off.
    """

    goal: np.ndarray
    q: np.ndarray
    r: np.ndarray
    q_terminal: np.ndarray

    def running(self, t, x, u):
        state = ad.sum(ad.mul(self.q, ad.square(ad.sub(x, self.goal))), axis=-1)
        control = ad.sum(ad.mul(self.r, ad.square(u)), axis=-1)
        return ad.neg(ad.add(state, control))

    def terminal(self, x):
        return ad.neg(ad.sum(ad.mul(self.q_terminal, ad.square(ad.sub(x, self.goal))), axis=-1))


class Env:
    """Ground-truth system. Subclasses set the attributes below in ``__init__``."""

    spec: EnvSpec
    reward: TrajectoryReward
    start: np.ndarray
    goal: np.ndarray
    data_region: Region
    latent_state_box: Box
    latent_action_box: Box

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_state(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float64)

    def encode_action(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float64)

    def decode_state(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64)

    def start_state(self) -> np.ndarray:
        return self.encode_state(self.start)

    def nominal_action(self) -> np.ndarray:
        return self.encode_action(np.zeros(self.latent_action_box.dim))

    def cost(self, x_seq: np.ndarray, u_seq: np.ndarray) -> float:
        return self.reward.cost(x_seq, u_seq)

    def distance_to_goal(self, obs: np.ndarray) -> float:
        return float(np.linalg.norm(self.decode_state(obs) - self.goal))


@dataclass
class EnvFactory:
    builder: Any
    params: dict[str, Any] = field(default_factory=dict)


def make_env(name: str, params: dict | None = None) -> Env:
    """
    Build a registered environment with optional parameter overrides.

    Raises:
        ConfigError: unknown name or unknown parameter.
    """
    from .cartpole import CartPoleEnv, CartPoleParams
    from .pit import PitEnv, PitParams
    from .pixel import PixelEnv, PixelParams

    registry = {
        "cartpole": EnvFactory(lambda kw: CartPoleEnv(CartPoleParams(**kw))),
        "pit": EnvFactory(lambda kw: PitEnv(PitParams(**kw))),
        "integrator": EnvFactory(lambda kw: PitEnv(PitParams(**kw)), {"hole_radius": 0.0}),
        "pixel": EnvFactory(lambda kw: PixelEnv(PixelParams(**kw))),
    }
    if name not in registry:
        raise ConfigError(f"Unknown environment {name!r} (expected one of {', '.join(registry)})")
    factory = registry[name]
    kwargs = {**factory.params, **(params or {})}
    try:
        return factory.builder(kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid parameters for environment {name!r}: {e}") from e
