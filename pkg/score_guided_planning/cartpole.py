"""
Cart-pole swing-up.

State is ``(x, theta, x_dot, theta_dot)`` with ``theta = 0`` hanging down and
``theta = pi`` upright; the action is a horizontal force on the cart. The
task starts hanging at rest and is scored only on the terminal state.
"""

from dataclasses import dataclass

import numpy as np

from .environments import Box, Env, EnvSpec, QuadraticReward, Region
from .errors import ConfigError


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 1.0
    pole_length: float = 1.0
    gravity: float = 9.81
    dt: float = 0.05
    integrator: str = "rk4"
    episode_length: int = 60
    force_limit: float = 10.0
    # Data box half-widths
    position_limit: float = 3.0
    angle_limit: float = float(np.pi)
    velocity_limit: float = 6.0
    q: tuple[float, ...] = (1.0, 1.0, 0.1, 0.1)
    start: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    goal: tuple[float, ...] = (0.0, float(np.pi), 0.0, 0.0)

    def __post_init__(self):
        if min(self.cart_mass, self.pole_mass, self.pole_length, self.dt) <= 0:
            raise ConfigError("Cart-pole masses, pole length and dt must be > 0")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigError(f"Unknown integrator {self.integrator!r} (expected euler or rk4)")


def cartpole_derivatives(params: CartPoleParams, state: np.ndarray, force) -> np.ndarray:
    """Time derivative of ``state`` (any leading batch shape) under ``force``."""
    mc, mp, l, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    theta, x_dot, theta_dot = state[..., 1], state[..., 2], state[..., 3]
    f = np.asarray(force, dtype=np.float64)
    if f.ndim and f.shape[-1] == 1:
        f = f[..., 0]
    s, c = np.sin(theta), np.cos(theta)
    denom = mc + mp * s * s
    x_acc = (f + mp * s * (l * theta_dot**2 + g * c)) / denom
    theta_acc = (-f * c - mp * l * theta_dot**2 * c * s - (mc + mp) * g * s) / (l * denom)
    return np.stack([x_dot, theta_dot, x_acc, theta_acc], axis=-1)


def cartpole_step(params: CartPoleParams, state: np.ndarray, force) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    dt = params.dt
    if params.integrator == "euler":
        return state + dt * cartpole_derivatives(params, state, force)
    k1 = cartpole_derivatives(params, state, force)
    k2 = cartpole_derivatives(params, state + 0.5 * dt * k1, force)
    k3 = cartpole_derivatives(params, state + 0.5 * dt * k2, force)
    k4 = cartpole_derivatives(params, state + dt * k3, force)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def cartpole_energy(params: CartPoleParams, state: np.ndarray) -> np.ndarray:
    """Total mechanical energy; conserved by the unforced continuous system."""
    mc, mp, l, g = params.cart_mass, params.pole_mass, params.pole_length, params.gravity
    theta, x_dot, theta_dot = state[..., 1], state[..., 2], state[..., 3]
    kinetic = (
        0.5 * (mc + mp) * x_dot**2
        + mp * l * x_dot * theta_dot * np.cos(theta)
        + 0.5 * mp * l**2 * theta_dot**2
    )
    return kinetic - mp * g * l * np.cos(theta)


def cartpole_cost(traj: np.ndarray, q=(1.0, 1.0, 0.1, 0.1), goal=(0.0, np.pi, 0.0, 0.0)) -> float:
    """Terminal-only cost ``||x_T - goal||_Q^2`` of a ``(T+1, 4)`` trajectory."""
    err = np.asarray(traj, dtype=np.float64)[-1] - np.asarray(goal)
    return float(np.sum(np.asarray(q) * err * err))


class CartPoleEnv(Env):
    def __init__(self, params: CartPoleParams | None = None):
        self.params = params or CartPoleParams()
        p = self.params
        limits = np.array([p.position_limit, p.angle_limit, p.velocity_limit, p.velocity_limit])
        self.latent_state_box = Box(-limits, limits)
        self.latent_action_box = Box([-p.force_limit], [p.force_limit])
        self.spec = EnvSpec(
            name="cartpole",
            n=4,
            m=1,
            action_box=self.latent_action_box,
            state_box=self.latent_state_box,
            episode_length=p.episode_length,
            cost="terminal ||x_T - goal||_Q^2",
        )
        self.start = np.array(p.start, dtype=np.float64)
        self.goal = np.array(p.goal, dtype=np.float64)
        self.data_region = Region(self.latent_state_box)
        self.reward = QuadraticReward(
            goal=self.goal, q=np.zeros(4), r=np.zeros(1), q_terminal=np.array(p.q, dtype=np.float64)
        )

    def step(self, x, u):
        return cartpole_step(self.params, x, u)
