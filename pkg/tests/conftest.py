"""Shared fixtures: tiny datasets, exactly-known dynamics models and a temp experiment dir."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from score_guided_planning.config import ExperimentConfig, TrainConfig  # noqa: E402
from score_guided_planning.datasets import TransitionDataset  # noqa: E402
from score_guided_planning.dynamics import single_integrator  # noqa: E402
from score_guided_planning.environments import Box, QuadraticReward  # noqa: E402


def random_points(seed, N, d, scale=1.0):
    """N points in R^d from a seeded standard normal, scaled."""
    return scale * np.random.default_rng(seed).standard_normal((N, d))


def integrator_dataset(N=200, seed=0, n=2, limit=0.1):
    """Transitions of x' = x + u with x uniform in [0, 1]^n and u in [-limit, limit]^n."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(N, n))
    u = rng.uniform(-limit, limit, size=(N, n))
    return TransitionDataset(x, u, x + u)


def fast_train(steps=200, batch_size=64, lr=1e-2, val_fraction=0.0):
    """A quiet TrainConfig for tests."""
    return TrainConfig(
        steps=steps,
        batch_size=batch_size,
        lr=lr,
        val_fraction=val_fraction,
        log_every=max(1, steps // 4),
        progress=False,
    )


@pytest.fixture
def integrator_model():
    return single_integrator(2)


@pytest.fixture
def goal_reward():
    """-||x_T - goal||^2 with goal (1, 1); no running or control terms."""
    return QuadraticReward(goal=np.array([1.0, 1.0]), q=0.0, r=0.0, q_terminal=1.0)


@pytest.fixture
def unit_box():
    return Box([-1.0, -1.0], [1.0, 1.0])


def small_experiment_config(output_dir):
    """Small integrator experiment writing into ``output_dir``."""
    cfg = ExperimentConfig(output_dir=str(output_dir))
    cfg.env.name = "integrator"
    cfg.env.params = {"episode_length": 5}
    cfg.data.n = 300
    cfg.dynamics.net.hidden = [16]
    cfg.dynamics.train = fast_train(steps=100)
    cfg.score.net.hidden = [16, 16]
    cfg.score.train = fast_train(steps=50)
    cfg.score.schedule.levels = 3
    cfg.distance.net.hidden = [8]
    cfg.distance.train = fast_train(steps=20)
    cfg.ensemble.members = 2
    cfg.planner.max_iters = 9
    cfg.planner.horizon = 5
    cfg.cem.population = 20
    cfg.cem.elites = 4
    cfg.cem.iterations = 5
    cfg.mpc.horizon = 3
    cfg.mpc.episode_length = 4
    cfg.mpc.iters_per_step = 3
    return cfg


@pytest.fixture
def experiment_config(tmp_path):
    return small_experiment_config(tmp_path / "run")
