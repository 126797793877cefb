"""
First-order feedback policy search with the score penalty.

A policy ``u_t = pi(x_t)`` is rolled out in closed loop through the learned
model and improved by gradient ascent on the Monte-Carlo average of the
penalized return over initial states. Scores along each rollout are
evaluated once and held constant, the same surrogate the open-loop planner
differentiates.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .adam import AdamState, TrainResult, adam_step, clip_global_norm
from .environments import Box, Env, TrajectoryReward
from .errors import ConfigError, NumericError, RolloutDivergenceError
from .mlp import Mlp, forward, mlp_init
from .planners import PenalizedValue, penalized_value, state_action_pairs
from .rng import make_rng
from .score_model import ScoreOracle

logger = logging.getLogger(__name__)

# sampler(rng, count) -> (count, n) initial states
InitialStateSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class Policy:
    """MLP feedback policy squashed into an action box with ``tanh``."""

    net: Mlp
    box: Box

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters()

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Policy":
        return dataclasses.replace(self, net=self.net.with_parameters(params))

    def act(self, x, tape: "ad.Tape | None" = None):
        params = tape.bind(self) if tape is not None else None
        out = forward(self.net, x, params=params)
        return ad.add(self.box.center, ad.mul(self.box.half_width, ad.tanh(out)))


def policy_init(
    n: int, box: Box, hidden: Sequence[int] = (), activation: str = "tanh", seed: int = 0
) -> Policy:
    """A policy with the given hidden widths; no hidden layers gives a squashed linear policy."""
    return Policy(mlp_init([n, *hidden, box.dim], activation, seed), box)


def start_sampler(x1, spread: float = 0.0) -> InitialStateSampler:
    """Initial states ``x1 + spread * N(0, I)``; ``spread=0`` is deterministic."""
    x1 = np.asarray(x1, dtype=np.float64)

    def sample(rng: np.random.Generator, count: int) -> np.ndarray:
        noise = rng.standard_normal((count, x1.size)) if spread > 0 else np.zeros((count, x1.size))
        return x1 + spread * noise

    return sample


def closed_loop_rollout(policy: Policy, model, x1, T: int, tape: "ad.Tape | None" = None):
    """States ``x_0..x_T`` and actions ``u_0..u_{T-1}``; lists when recorded, arrays otherwise."""
    xs, us = [np.asarray(x1, dtype=np.float64)], []
    for t in range(T):
        u = policy.act(xs[-1], tape)
        x = model.predict(xs[-1], u)
        if not np.all(np.isfinite(ad.value_of(x))):
            raise RolloutDivergenceError(
                f"Closed-loop rollout diverged at step {t + 1}", step=t + 1
            )
        us.append(u)
        xs.append(x)
    if tape is not None:
        return xs, us
    return np.stack(xs), np.stack(us) if us else np.zeros((0, policy.box.dim))


def closed_loop_value(
    policy: Policy,
    model,
    x1,
    T: int,
    reward_fn: TrajectoryReward,
    oracle: ScoreOracle | None,
    beta: float,
    k: int,
) -> PenalizedValue:
    """Penalized value of one closed-loop rollout; exact likelihood when the oracle has one."""
    x_seq, u_seq = closed_loop_rollout(policy, model, x1, T)
    if beta == 0 or oracle is None:
        return penalized_value(x_seq, u_seq, reward_fn, None, 0.0, 0.0)
    probe = oracle.log_likelihood(state_action_pairs(x_seq, u_seq), k)
    likelihood = (lambda Z: oracle.log_likelihood(Z, k)) if probe is not None else None
    return penalized_value(
        x_seq,
        u_seq,
        reward_fn,
        likelihood,
        beta,
        oracle.sigma(k),
        score_fn=lambda Z: oracle.score(Z, k),
    )


@dataclass
class PolicyGradient:
    grads: list[np.ndarray]
    objective: float
    n_used: int
    n_dropped: int


def _sample_gradient(policy, model, oracle, reward_fn, x1, T, beta, k):
    tape = ad.Tape()
    xs, us = closed_loop_rollout(policy, model, x1, T, tape)
    objective = reward_fn.total(xs, us)
    if beta > 0:
        x_seq = np.stack([ad.value_of(x) for x in xs])
        u_seq = np.stack([ad.value_of(u) for u in us])
        scores = np.asarray(oracle.score(state_action_pairs(x_seq, u_seq), k), dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise NumericError(f"Non-finite score along a closed-loop rollout (level {k})")
        n = x_seq.shape[-1]
        surrogate = 0.0
        for t in range(T):
            surrogate = ad.add(surrogate, ad.sum(ad.mul(scores[t, :n], xs[t])))
            surrogate = ad.add(surrogate, ad.sum(ad.mul(scores[t, n:], us[t])))
        objective = ad.add(objective, ad.mul(beta * oracle.sigma(k) ** 2, surrogate))
    return tape.backward(objective).params(policy), float(ad.value_of(objective))


def policy_search_step(
    policy: Policy,
    model,
    oracle: ScoreOracle | None,
    reward_fn: TrajectoryReward,
    sampler: InitialStateSampler,
    n_mc: int,
    beta: float,
    k: int,
    *,
    T: int,
    rng: np.random.Generator,
) -> PolicyGradient:
    """
    Monte-Carlo gradient (ascent direction) of the penalized closed-loop return.

    Samples whose rollout diverges are dropped and counted; the gradient is the
    mean over the rest.

    Raises:
        NumericError: every sample diverged.
    """
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    if beta > 0 and oracle is None:
        raise ConfigError("A positive beta needs a score oracle")
    total = [np.zeros_like(p) for p in policy.parameters()]
    values, dropped = [], 0
    for x1 in sampler(rng, n_mc):
        try:
            grads, value = _sample_gradient(policy, model, oracle, reward_fn, x1, T, beta, k)
        except RolloutDivergenceError as e:
            dropped += 1
            logger.debug(f"Dropped policy-search sample: {e}")
            continue
        total = [a + g for a, g in zip(total, grads)]
        values.append(value)
    if dropped:
        logger.warning(f"Dropped {dropped} of {n_mc} policy-search samples with divergent rollouts")
    if not values:
        raise NumericError("All policy-search rollouts diverged")
    used = len(values)
    return PolicyGradient([g / used for g in total], float(np.mean(values)), used, dropped)


def true_closed_loop_cost(policy: Policy, env: Env, T: int | None = None, x1=None) -> float:
    """Cost of running the policy on the true environment from its start state."""
    T = T or env.spec.episode_length
    x = np.asarray(env.start_state() if x1 is None else x1, dtype=np.float64)
    xs, us = [x], []
    for _ in range(T):
        u = np.asarray(policy.act(x), dtype=np.float64)
        x = np.asarray(env.step(x, u), dtype=np.float64)
        us.append(u)
        xs.append(x)
    return env.cost(np.stack(xs), np.stack(us))


def train_policy(
    policy: Policy,
    model,
    oracle: ScoreOracle | None,
    reward_fn: TrajectoryReward,
    sampler: InitialStateSampler,
    *,
    T: int,
    steps: int = 200,
    n_mc: int = 8,
    beta: float = 0.0,
    k: int | None = None,
    lr: float = 1e-2,
    grad_clip: float | None = 100.0,
    seed: int = 0,
    env: Env | None = None,
    progress: bool = False,
) -> TrainResult:
    """
    Adam on the policy parameters for ``steps`` Monte-Carlo gradient steps.

    ``k`` defaults to the oracle's final noise level. With ``env`` the true
    closed-loop cost before and after training is reported in ``metrics``.
    """
    k = k if k is not None else (oracle.K if oracle is not None else 1)
    rng = make_rng(seed, "policy")
    state = AdamState(lr=lr)
    metrics = {}
    if env is not None:
        metrics["true_cost_before"] = true_closed_loop_cost(policy, env, T)

    rows = []
    for step in tqdm(range(1, steps + 1), desc="Policy search", disable=not progress):
        pg = policy_search_step(
            policy, model, oracle, reward_fn, sampler, n_mc, beta, k, T=T, rng=rng
        )
        if not math.isfinite(pg.objective):
            raise NumericError(f"Policy objective became {pg.objective} at step {step}")
        grads, _ = clip_global_norm([-g for g in pg.grads], grad_clip)
        params, state = adam_step(policy.parameters(), grads, state)
        policy = policy.with_parameters(params)
        rows.append([step, pg.objective, pg.n_dropped])

    if env is not None:
        metrics["true_cost_after"] = true_closed_loop_cost(policy, env, T)
        logger.info(
            f"Policy search: true cost {metrics['true_cost_before']:.4g} "
            f"-> {metrics['true_cost_after']:.4g}"
        )
    log = pd.DataFrame(rows, columns=["step", "objective", "n_dropped"])
    return TrainResult(policy, log, state, steps, metrics)
