"""
Small, fully-known problems used to check the distance-to-data machinery:

* a 1-D regression testbed (cubic ground truth, MLP fit) for the Lipschitz
  error bound,
* a 1-D ensemble testbed comparing variance descent with annealed descent,
* the landing-rate measurement behind the stability test,
* the function-vs-derivative error counterexample.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from . import autodiff as ad
from .adam import AdamState, adam_step
from .config import NetConfig, TrainConfig
from .datasets import TransitionDataset
from .distance import (
    annealed_descent,
    as_points,
    error_bound,
    gradient_error_counterexample,
    lipschitz_estimate,
    squared_distances,
)
from .dynamics import ensemble_variance_descent, train_ensemble
from .errors import StepSizeError
from .mlp import Mlp, forward, mlp_init
from .rng import make_rng
from .score_model import make_schedule

logger = logging.getLogger(__name__)


def cubic(x):
    return x**3 - 0.5 * x


@dataclass
class RegressionTestbed:
    x_data: np.ndarray
    y_data: np.ndarray
    net: Mlp
    truth: Callable[[np.ndarray], np.ndarray]

    def predict(self, x) -> np.ndarray:
        return forward(self.net, np.asarray(x, dtype=np.float64).reshape(-1, 1))[:, 0]

    def errors(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return np.abs(self.truth(x) - self.predict(x))

    def hull_grid(self, size: int = 2001) -> np.ndarray:
        return np.linspace(self.x_data.min(), self.x_data.max(), size)


def regression_testbed(
    n_points: int = 20,
    seed: int = 0,
    hidden=(32, 32),
    steps: int = 2000,
    lr: float = 1e-2,
    low=-1.0,
    high=1.0,
) -> RegressionTestbed:
    """Fit an MLP to ``n_points`` noiseless samples of a cubic by full-batch Adam."""
    x = np.sort(make_rng(seed, "data").uniform(low, high, size=n_points))
    y = cubic(x)
    net = mlp_init([1, *hidden, 1], "tanh", seed)
    state = AdamState(lr=lr)
    for _ in range(steps):
        tape = ad.Tape()
        out = forward(net, x[:, None], tape)
        loss = ad.mean(ad.square(ad.sub(out, y[:, None])))
        params, state = adam_step(net.parameters(), tape.backward(loss).params(net), state)
        net = net.with_parameters(params)
    return RegressionTestbed(x, y, net, cubic)


def error_bound_check(
    testbed: RegressionTestbed, sigma: float = 0.05, grid_size: int = 2001
) -> pd.DataFrame:
    """
    True error and the Lipschitz bound on a dense grid over the data hull.

    ``L_e`` is estimated from pairwise slopes of the error on the grid itself;
    the error at the nearest data point comes from the training points.
    """
    grid = testbed.hull_grid(grid_size)
    true_error = testbed.errors(grid)
    L_e = lipschitz_estimate(grid, true_error)
    bound = error_bound(grid, testbed.x_data, sigma, None, L_e, testbed.errors(testbed.x_data))
    logger.info(f"Error bound check: L_e={L_e:.4g}, max true error {true_error.max():.3g}")
    return pd.DataFrame({"z": grid, "true_error": true_error, "bound": bound})


def landing_rate(
    points,
    schedule,
    inits: np.ndarray,
    tolerance: float,
    *,
    step_size: float = 0.5,
    inner_iters: int | None = None,
    score_fn=None,
) -> tuple[float, np.ndarray]:
    """
    Fraction of annealed-descent runs ending within ``tolerance`` of a data point.

    Returns the rate and the final distances. A run whose step-size check
    fails counts as not landed.
    """
    pts = as_points(points)
    inits = np.atleast_2d(np.asarray(inits, dtype=np.float64))
    try:
        final, _ = annealed_descent(inits, pts, schedule, inner_iters, step_size, score_fn=score_fn)
        dist = np.sqrt(np.min(squared_distances(final, pts), axis=-1))
    except StepSizeError as e:
        logger.warning(f"Batched descent failed ({e}); retrying run by run")
        dist = np.full(len(inits), np.inf)
        for i, z0 in enumerate(inits):
            try:
                final, _ = annealed_descent(
                    z0[None], pts, schedule, inner_iters, step_size, score_fn=score_fn
                )
                dist[i] = np.sqrt(np.min(squared_distances(final, pts)))
            except StepSizeError:
                continue
    return float(np.mean(dist <= tolerance)), dist


@dataclass
class EnsembleMinimaResult:
    ensemble_far_fraction: float
    softmin_far_fraction: float
    ensemble_final: np.ndarray
    softmin_final: np.ndarray


def ensemble_minima_testbed(
    seed: int = 0,
    n_inits: int = 100,
    members: int = 2,
    far: float = 0.05,
    data=(-1.0, -0.8, -0.6, 0.6, 0.8, 1.0),
    train_steps: int = 3000,
    descent_iters: int = 2000,
) -> EnsembleMinimaResult:
    """
    Compare where descent ends on a 1-D dataset: ensemble variance vs annealed softmin distance.

    The ensemble regresses ``sin(3x)`` on the data points; both descents
    start from the same uniform inits over the widened data hull.
    """
    x = np.asarray(data, dtype=np.float64)[:, None]
    dataset = TransitionDataset(x, np.zeros((len(x), 0)), np.sin(3.0 * x))
    ens, _ = train_ensemble(
        dataset,
        members,
        NetConfig(hidden=[32, 32], activation="tanh"),
        TrainConfig(
            steps=train_steps,
            batch_size=len(x),
            lr=1e-2,
            val_fraction=0.0,
            log_every=train_steps,
            progress=False,
        ),
        mode="absolute",
        seed=seed,
    )
    inits = make_rng(seed, "probe").uniform(x.min() - 0.5, x.max() + 0.5, size=(n_inits, 1))
    ens_final = ensemble_variance_descent(ens, inits, lr=1e-2, iters=descent_iters)
    ens_dist = np.sqrt(np.min(squared_distances(ens_final, x), axis=-1))

    schedule = make_schedule(1.0, 1e-3, 10)
    _, soft_dist = landing_rate(x, schedule, inits, far)
    return EnsembleMinimaResult(
        float(np.mean(ens_dist > far)),
        float(np.mean(soft_dist > far)),
        ens_final[:, 0],
        soft_dist,
    )


def counterexample_report(alpha: float = 1e-2, omega: float = 1e3, n: int = 200_001) -> dict:
    """Function and derivative error of ``f + alpha cos(omega x)`` against ``f = x^3`` on [0, 1]."""
    grid = np.linspace(0.0, 1.0, n)
    value_error, slope_error = gradient_error_counterexample(lambda v: v**3, alpha, omega, grid)
    return {
        "alpha": alpha,
        "omega": omega,
        "max_value_error": value_error,
        "max_slope_error": slope_error,
        "alpha_omega": alpha * omega,
    }
