"""
2-D single integrator with a circular pit where actuation is lost.

Outside the pit ``x' = x + u``; inside it (strictly within the radius) the
state never changes again. The pit boundary itself counts as outside. The
default data region excludes the pit, so a learned model has never seen a
transition there and extrapolates the integrator straight through it.
"""

from dataclasses import dataclass

import numpy as np

from .environments import Box, Env, EnvSpec, QuadraticReward, Region
from .errors import ConfigError


@dataclass(frozen=True)
class PitParams:
    domain_low: tuple[float, float] = (0.0, 0.0)
    domain_high: tuple[float, float] = (1.0, 1.0)
    hole_center: tuple[float, float] = (0.5, 0.5)
    # 0 disables the pit (plain single integrator)
    hole_radius: float = 0.15
    goal: tuple[float, float] = (0.9, 0.5)
    start: tuple[float, float] = (0.1, 0.5)
    action_limit: float = 0.1
    episode_length: int = 20
    running_weight: float = 1.0
    terminal_weight: float = 10.0
    control_weight: float = 0.0
    data_excludes_hole: bool = True

    def __post_init__(self):
        if self.hole_radius < 0:
            raise ConfigError(f"hole_radius must be >= 0, got {self.hole_radius}")
        c, r = np.asarray(self.hole_center), self.hole_radius
        if self.hole_radius > 0 and (
            np.any(c - r <= np.asarray(self.domain_low))
            or np.any(c + r >= np.asarray(self.domain_high))
        ):
            raise ConfigError("The pit must lie strictly inside the domain")


def in_hole(params: PitParams, x) -> np.ndarray:
    if params.hole_radius == 0:
        return np.zeros(np.shape(x)[:-1], dtype=bool)
    offset = np.asarray(x) - np.asarray(params.hole_center)
    return np.linalg.norm(offset, axis=-1) < params.hole_radius


def pit_step(params: PitParams, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    stuck = in_hole(params, x)
    return np.where(stuck[..., None], x, x + u)


def pit_crossings(params: PitParams, x_seq: np.ndarray) -> int:
    """Number of trajectory states inside the pit."""
    return int(np.sum(in_hole(params, x_seq)))


class PitEnv(Env):
    def __init__(self, params: PitParams | None = None):
        self.params = params or PitParams()
        p = self.params
        self.latent_state_box = Box(p.domain_low, p.domain_high)
        self.latent_action_box = Box([-p.action_limit] * 2, [p.action_limit] * 2)
        name = "pit" if p.hole_radius > 0 else "integrator"
        self.spec = EnvSpec(
            name=name,
            n=2,
            m=2,
            action_box=self.latent_action_box,
            state_box=self.latent_state_box,
            episode_length=p.episode_length,
            cost="running w||x_t - goal||^2 + c||u_t||^2, terminal W||x_T - goal||^2",
        )
        self.start = np.array(p.start, dtype=np.float64)
        self.goal = np.array(p.goal, dtype=np.float64)
        excluded = p.hole_radius > 0 and p.data_excludes_hole
        holes = ((tuple(p.hole_center), p.hole_radius),) if excluded else ()
        self.data_region = Region(self.latent_state_box, holes)
        self.reward = QuadraticReward(
            goal=self.goal,
            q=np.full(2, p.running_weight),
            r=np.full(2, p.control_weight),
            q_terminal=np.full(2, p.terminal_weight),
        )

    def step(self, x, u):
        return pit_step(self.params, x, u)

    def in_hole(self, x) -> np.ndarray:
        return in_hole(self.params, x)
