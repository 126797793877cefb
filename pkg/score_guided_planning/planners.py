"""
Single-shooting planners over a learned dynamics model.

All gradient planners share one loop: Adam ascends the planning objective in
the control sequence, actions are projected onto the action box after every
step, and the best iterate of the final noise level is returned. They differ
in the penalty added to the model return:

* ``sgp``: ``beta * sigma_k^2 * sum_t log p_sigma_k(x_t, u_t)`` through a
  score oracle, with scores evaluated once per iteration and held constant
  while differentiating through the rollout,
* ``vanilla``: no penalty,
* ``ensemble``: ``-beta * sum_t var(x_t, u_t)`` across ensemble members,
  rolled out under the ensemble mean.

``cem_plan`` is the derivative-free alternative; it scores whole populations
of control sequences with a batched objective.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from . import autodiff as ad
from .adam import AdamState, adam_step, clip_global_norm
from .config import CemConfig, PlannerConfig
from .datasets import NormStats
from .distance import DistanceRegressor, predict_distance
from .dynamics import Ensemble, ensemble_variance
from .environments import Box, TrajectoryReward
from .errors import ConfigError, ContractError, NumericError, RolloutDivergenceError, ShapeError
from .reports import trajectory_frame
from .rng import make_rng
from .score_model import ScoreOracle, level_for_iteration

logger = logging.getLogger(__name__)

SCORE_PATH = "score-path, value unavailable"
HISTORY_COLUMNS = ["iteration", "level", "sigma", "objective", "reward", "penalty", "grad_norm"]


@dataclass
class Plan:
    """An optimized control sequence and its rollout under the planning model."""

    u_seq: np.ndarray
    x_seq: np.ndarray
    objective: float
    history: pd.DataFrame
    method: str = "sgp"
    reward: float = float("nan")
    penalty: float = 0.0
    penalty_source: str = "exact"
    details: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.u_seq.shape[0]

    def frame(self) -> pd.DataFrame:
        return trajectory_frame(self.x_seq, self.u_seq)


@dataclass(frozen=True)
class PenalizedValue:
    reward: float
    penalty: float
    source: str

    @property
    def total(self) -> float:
        return self.reward + self.penalty

    def __float__(self) -> float:
        return self.total


def rollout(model, x1, u_seq, tape: "ad.Tape | None" = None, *, check: bool = True):
    """
    Apply ``model.predict`` sequentially from ``x1``.

    With plain arrays the result is an array ``(..., T+1, n)``; ``x1`` may
    carry a leading population axis matching ``u_seq`` ``(P, T, m)``. When
    ``u_seq`` is a ``Var`` (or a list of per-step ``Var``s) or a tape is
    given, the rollout is recorded and a list of T+1 states is returned.

    Raises:
        ShapeError: ``x1`` or ``u_seq`` do not match the model's dimensions.
        RolloutDivergenceError: a predicted state is NaN or infinite (``step``
            is the index of the first bad state).
    """
    steps = list(u_seq) if isinstance(u_seq, (list, tuple)) else None
    recorded = tape is not None or steps is not None or isinstance(u_seq, ad.Var)
    x1v = ad.value_of(x1)
    u_width = ad.value_of(steps[0]).shape[-1:] if steps else ad.value_of(u_seq).shape[-1:]
    if x1v.shape[-1:] != (model.n,) or u_width != (model.m,):
        raise ShapeError(
            f"Rollout expects x dim {model.n} and u dim {model.m}, "
            f"got {x1v.shape} and u width {u_width}"
        )

    if recorded:
        if steps is None:
            steps = [ad.getitem(u_seq, t) for t in range(ad.value_of(u_seq).shape[0])]
        xs = [x1]
        for t, u in enumerate(steps):
            x = model.predict(xs[-1], u, tape)
            if check and not np.all(np.isfinite(ad.value_of(x))):
                raise RolloutDivergenceError(f"Rollout diverged at step {t + 1}", step=t + 1)
            xs.append(x)
        return xs

    u = np.asarray(u_seq, dtype=np.float64)
    x = np.broadcast_to(x1v, u.shape[:-2] + (model.n,)).astype(np.float64)
    xs = [x]
    for t in range(u.shape[-2]):
        x = np.asarray(model.predict(x, u[..., t, :]), dtype=np.float64)
        if check and not np.all(np.isfinite(x)):
            raise RolloutDivergenceError(f"Rollout diverged at step {t + 1}", step=t + 1)
        xs.append(x)
    return np.stack(xs, axis=-2)


def state_action_pairs(x_seq, u_seq) -> np.ndarray:
    """``(..., T, n + m)`` pairs ``(x_t, u_t)`` for t < T."""
    x = np.asarray(x_seq, dtype=np.float64)
    u = np.asarray(u_seq, dtype=np.float64)
    return np.concatenate([x[..., : u.shape[-2], :], u], axis=-1)


def _pairs_apply(fn, Z: np.ndarray) -> np.ndarray:
    """Evaluate a per-point function on ``(..., d)`` pairs through a flat batch."""
    flat = Z.reshape(-1, Z.shape[-1])
    return np.asarray(fn(flat), dtype=np.float64).reshape(Z.shape[:-1])


def penalized_value(
    x_seq,
    u_seq,
    reward_fn: TrajectoryReward,
    likelihood_fn: Callable[[np.ndarray], np.ndarray] | None,
    beta: float,
    sigma: float,
    *,
    score_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> PenalizedValue:
    """
    Model return plus ``beta * sigma^2 * sum_t log p(x_t, u_t)``.

    ``likelihood_fn`` maps ``(N, n + m)`` pairs to log densities. When only a
    score is available (``score_fn``) the penalty is the local-Gaussian
    surrogate ``-1/2 sigma^4 ||s||^2`` per pair and the source is flagged
    ``score-path, value unavailable``.
    """
    reward = float(ad.value_of(reward_fn.total(x_seq, u_seq)))
    if beta == 0:
        return PenalizedValue(reward, 0.0, "none")
    Z = state_action_pairs(x_seq, u_seq)
    if likelihood_fn is not None:
        ll = _pairs_apply(likelihood_fn, Z)
        return PenalizedValue(reward, beta * sigma**2 * float(np.sum(ll)), "exact")
    if score_fn is not None:
        s = np.asarray(score_fn(Z.reshape(-1, Z.shape[-1])), dtype=np.float64)
        return PenalizedValue(reward, -0.5 * beta * sigma**4 * float(np.sum(s * s)), SCORE_PATH)
    raise ContractError("A positive beta needs a likelihood_fn or a score_fn")


def _penalty_sigma(oracle: ScoreOracle, k: int, normalized: bool) -> float:
    return oracle.sigma(oracle.K if normalized else k)


def _sgp_pass(model, oracle, reward_fn, x1, u_seq, beta, k, normalized_penalty):
    """Gradient of the detached-score surrogate, the rollout and the penalized value."""
    u_seq = np.asarray(u_seq, dtype=np.float64)
    T = u_seq.shape[0]
    tape = ad.Tape()
    u = tape.leaf(u_seq)
    steps = [ad.getitem(u, t) for t in range(T)]
    xs = rollout(model, x1, steps)
    x_seq = np.stack([ad.value_of(x) for x in xs])
    objective = reward_fn.total(xs, steps)
    value = PenalizedValue(float(ad.value_of(objective)), 0.0, "none")

    if beta > 0:
        sigma = _penalty_sigma(oracle, k, normalized_penalty)
        Z = state_action_pairs(x_seq, u_seq)
        scores = np.asarray(oracle.score(Z, k), dtype=np.float64)
        bad = ~np.all(np.isfinite(scores), axis=-1)
        if np.any(bad):
            raise NumericError(f"Non-finite score at t={int(np.flatnonzero(bad)[0])} (level {k})")
        n = x_seq.shape[-1]
        surrogate = 0.0
        for t in range(T):
            surrogate = ad.add(surrogate, ad.sum(ad.mul(scores[t, :n], xs[t])))
            surrogate = ad.add(surrogate, ad.sum(ad.mul(scores[t, n:], steps[t])))
        objective = ad.add(objective, ad.mul(beta * sigma**2, surrogate))
        ll = oracle.log_likelihood(Z, k)
        if ll is not None:
            value = PenalizedValue(value.reward, beta * sigma**2 * float(np.sum(ll)), "exact")
        else:
            penalty = -0.5 * beta * sigma**4 * float(np.sum(scores * scores))
            value = PenalizedValue(value.reward, penalty, SCORE_PATH)

    if not isinstance(objective, ad.Var):
        return np.zeros_like(u_seq), x_seq, value
    return tape.backward(objective).wrt(u), x_seq, value


def sgp_gradient(
    model,
    oracle: ScoreOracle | None,
    reward_fn: TrajectoryReward,
    x1,
    u_seq,
    beta: float,
    k: int,
    *,
    normalized_penalty: bool = False,
) -> np.ndarray:
    """
    Gradient of the score-penalized objective with respect to ``u_seq`` (ascent direction).

    The penalty enters as ``beta * sigma_k^2 * sum_t (s_x . x_t + s_u . u_t)``
    with the scores ``s`` of the pairs ``(x_t, u_t)``, t < T, treated as
    constants, which differentiates to the likelihood gradient pulled back
    through the rollout.

    Raises:
        NumericError: the oracle returned a non-finite score (the message names t).
    """
    if beta > 0 and oracle is None:
        raise ConfigError("A positive beta needs a score oracle")
    grad, _, _ = _sgp_pass(model, oracle, reward_fn, x1, u_seq, beta, k, normalized_penalty)
    return grad


def resolve_action_box(cfg: PlannerConfig, default: Box | None) -> Box | None:
    if cfg.action_low is not None and cfg.action_high is not None:
        return Box(cfg.action_low, cfg.action_high)
    return default


def initial_controls(
    cfg: PlannerConfig, T: int, m: int, action_box: Box | None, nominal: np.ndarray | None = None
) -> np.ndarray:
    """Starting control sequence: zeros, seeded Gaussian noise or the nominal action repeated."""
    if cfg.init == "gaussian":
        scale = cfg.init_scale * (action_box.half_width if action_box is not None else np.ones(m))
        u = make_rng(cfg.seed, "planner").normal(size=(T, m)) * scale
    elif cfg.init == "nominal" and nominal is not None:
        u = np.tile(np.asarray(nominal, dtype=np.float64), (T, 1))
    else:
        u = np.zeros((T, m))
    return action_box.clip(u) if action_box is not None else u


def _shooting(
    evaluate: Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray, PenalizedValue]],
    sigma_of: Callable[[int], float],
    K: int,
    u0: np.ndarray,
    cfg: PlannerConfig,
    action_box: Box | None,
    method: str,
) -> Plan:
    """Adam ascent over ``u`` with noise level ``k`` following the iteration count."""
    u = np.array(u0, dtype=np.float64)
    state = AdamState(lr=cfg.lr)
    rows = []
    best = None
    last_valid = None

    def record(j: int, k: int, x_seq, value: PenalizedValue, grad_norm: float):
        nonlocal best
        rows.append([j, k, sigma_of(k), value.total, value.reward, value.penalty, grad_norm])
        if k == K and (best is None or value.total > best[2].total):
            best = (u.copy(), x_seq, value)

    def make_plan(choice) -> Plan:
        u_best, x_best, value = choice
        history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
        return Plan(
            u_best, x_best, value.total, history, method, value.reward, value.penalty, value.source
        )

    try:
        for j in range(cfg.max_iters):
            k = level_for_iteration(j, K, cfg.max_iters)
            grad, x_seq, value = evaluate(u, k)
            last_valid = (u.copy(), x_seq, value)
            (step_grad,), norm = clip_global_norm([-grad], cfg.grad_clip)
            record(j, k, x_seq, value, norm)
            (u,), state = adam_step([u], [step_grad], state)
            if action_box is not None:
                u = action_box.clip(u)
        grad, x_seq, value = evaluate(u, K)
        record(cfg.max_iters, K, x_seq, value, float(np.linalg.norm(grad)))
    except RolloutDivergenceError as e:
        fallback = best or last_valid
        plan = make_plan(fallback) if fallback is not None else None
        raise RolloutDivergenceError(f"{method} planner: {e}", step=e.step, last_valid=plan) from e

    plan = make_plan(best)
    logger.debug(f"{method} plan: objective {plan.objective:.4g} after {cfg.max_iters} iterations")
    return plan


def sgp_plan(
    model,
    oracle: ScoreOracle | None,
    reward_fn: TrajectoryReward,
    x1,
    cfg: PlannerConfig,
    *,
    T: int | None = None,
    action_box: Box | None = None,
    u_init: np.ndarray | None = None,
    nominal: np.ndarray | None = None,
    method: str = "sgp",
) -> Plan:
    """
    Plan with score guidance: ``max_iters`` Adam steps split into K equal
    segments, segment k using noise level sigma_k of the oracle's schedule.

    With ``cfg.beta == 0`` (or no oracle) this is vanilla model-based planning.

    Raises:
        RolloutDivergenceError: the rollout went non-finite; ``last_valid``
            holds the best plan found up to then.
    """
    T = T or cfg.horizon
    if not T or T < 1:
        raise ConfigError("Planning horizon T must be >= 1")
    if cfg.beta > 0 and oracle is None:
        raise ConfigError("A positive beta needs a score oracle")
    box = resolve_action_box(cfg, action_box)
    u0 = (
        np.asarray(u_init, dtype=np.float64)
        if u_init is not None
        else initial_controls(cfg, T, model.m, box, nominal)
    )
    if u0.shape != (T, model.m):
        raise ShapeError(f"Initial controls must have shape {(T, model.m)}, got {u0.shape}")
    x1 = np.asarray(x1, dtype=np.float64)

    use_score = oracle is not None and cfg.beta > 0
    K = oracle.K if use_score else 1

    def evaluate(u, k):
        return _sgp_pass(model, oracle, reward_fn, x1, u, cfg.beta, k, cfg.normalized_penalty)

    def sigma_of(k):
        return _penalty_sigma(oracle, k, cfg.normalized_penalty) if use_score else float("nan")

    return _shooting(evaluate, sigma_of, K, u0, cfg, box, method)


def vanilla_plan(model, reward_fn: TrajectoryReward, x1, cfg: PlannerConfig, **kwargs) -> Plan:
    return sgp_plan(
        model, None, reward_fn, x1, dataclasses.replace(cfg, beta=0.0), method="vanilla", **kwargs
    )


def _ensemble_pass(ens: Ensemble, reward_fn, x1, u_seq, beta):
    u_seq = np.asarray(u_seq, dtype=np.float64)
    T = u_seq.shape[0]
    tape = ad.Tape()
    u = tape.leaf(u_seq)
    steps = [ad.getitem(u, t) for t in range(T)]
    xs = rollout(ens, x1, steps)
    objective = reward_fn.total(xs, steps)
    reward = float(ad.value_of(objective))
    penalty_value = 0.0
    if beta > 0:
        penalty = 0.0
        for t in range(T):
            penalty = ad.add(penalty, ensemble_variance(ens, xs[t], steps[t]))
        penalty_value = -beta * float(ad.value_of(penalty))
        objective = ad.sub(objective, ad.mul(beta, penalty))
    x_seq = np.stack([ad.value_of(x) for x in xs])
    value = PenalizedValue(reward, penalty_value, "ensemble variance" if beta > 0 else "none")
    if not isinstance(objective, ad.Var):
        return np.zeros_like(u_seq), x_seq, value
    return tape.backward(objective).wrt(u), x_seq, value


def ensemble_plan(
    ens: Ensemble,
    reward_fn: TrajectoryReward,
    x1,
    cfg: PlannerConfig,
    *,
    T: int | None = None,
    action_box: Box | None = None,
    u_init: np.ndarray | None = None,
    nominal: np.ndarray | None = None,
) -> Plan:
    """Shooting loop under the ensemble mean, penalized by ``beta`` times the ensemble variance."""
    T = T or cfg.horizon
    if not T or T < 1:
        raise ConfigError("Planning horizon T must be >= 1")
    box = resolve_action_box(cfg, action_box)
    u0 = (
        np.asarray(u_init, dtype=np.float64)
        if u_init is not None
        else initial_controls(cfg, T, ens.m, box, nominal)
    )
    if u0.shape != (T, ens.m):
        raise ShapeError(f"Initial controls must have shape {(T, ens.m)}, got {u0.shape}")
    x1 = np.asarray(x1, dtype=np.float64)

    def evaluate(u, k):
        return _ensemble_pass(ens, reward_fn, x1, u, cfg.beta)

    return _shooting(evaluate, lambda k: float("nan"), 1, u0, cfg, box, "ensemble")


def cem_update(
    samples: np.ndarray, values: np.ndarray, elites: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and std of the ``elites`` best samples and their indices. Ties keep population order."""
    order = np.argsort(-values, kind="stable")[:elites]
    chosen = samples[order]
    return chosen.mean(axis=0), chosen.std(axis=0), order


def cem_plan(
    model,
    objective_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x1,
    cem_cfg: CemConfig,
    seed: int = 0,
    *,
    T: int,
    action_box: Box | None = None,
    u_init: np.ndarray | None = None,
    std_floor: float = 1e-6,
) -> Plan:
    """
    Cross-entropy method over ``u_{1:T}``.

    Each iteration samples ``population`` sequences around the current mean,
    rolls them out as one batch, and moves the mean to the average of the
    ``elites`` best. ``objective_fn(x_seq, u_seq)`` scores a batch
    (``(P, T+1, n)``, ``(P, T, m)``) with larger being better; non-finite
    rollouts score minus infinity. Returns the best sample seen.
    """
    rng = make_rng(seed, "cem")
    x1 = np.asarray(x1, dtype=np.float64)
    mean = np.zeros((T, model.m)) if u_init is None else np.array(u_init, dtype=np.float64)
    std = np.full((T, model.m), cem_cfg.std)
    best_u, best_value = mean.copy(), -math.inf
    rows = []

    for it in range(cem_cfg.iterations):
        samples = mean + std * rng.standard_normal((cem_cfg.population, T, model.m))
        if action_box is not None:
            samples = action_box.clip(samples)
        xs = rollout(model, x1, samples, check=False)
        with np.errstate(invalid="ignore"):
            values = np.asarray(objective_fn(xs, samples), dtype=np.float64)
        values = np.where(np.isfinite(values), values, -math.inf)
        mean, elite_std, order = cem_update(samples, values, cem_cfg.elites)
        if cem_cfg.update_std:
            std = np.maximum(elite_std, std_floor)
        top = order[0]
        if values[top] > best_value:
            best_value, best_u = float(values[top]), samples[top].copy()
        rows.append([it, float(values[top]), float(np.mean(values[order])), best_value])

    if not math.isfinite(best_value):
        raise NumericError("CEM found no sample with a finite objective")
    history = pd.DataFrame(rows, columns=["iteration", "objective", "elite_mean", "best"])
    x_seq = rollout(model, x1, best_u)
    return Plan(best_u, x_seq, best_value, history, "cem", details={"mean": mean, "std": std})


def model_return_objective(
    reward_fn: TrajectoryReward,
) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def objective(xs, us):
        return np.asarray(reward_fn.total(xs, us), dtype=np.float64)

    return objective


def exact_penalty_objective(
    reward_fn: TrajectoryReward, oracle: ScoreOracle, beta: float, k: int | None = None
):
    """Model return plus the exact log-likelihood penalty at level ``k`` (default: the last)."""
    k = oracle.K if k is None else k
    sigma = oracle.sigma(k)
    base = model_return_objective(reward_fn)

    def objective(xs, us):
        value = base(xs, us)
        if beta == 0:
            return value
        pairs = state_action_pairs(xs, us).reshape(-1, xs.shape[-1] + us.shape[-1])
        ll = oracle.log_likelihood(pairs, k)
        if ll is None:
            raise ContractError("CEM needs an oracle with a log likelihood (exact oracle)")
        return value + beta * sigma**2 * np.asarray(ll).reshape(us.shape[:-1]).sum(axis=-1)

    return objective


def distance_penalty_objective(
    reward_fn: TrajectoryReward,
    regressor: DistanceRegressor,
    beta: float,
    sigma: float,
    stats: NormStats | None = None,
):
    """Model return minus ``beta`` times the learned distance to data, summed over the plan.

    ``stats`` maps raw pairs into the coordinates the regressor was trained in.
    """
    base = model_return_objective(reward_fn)

    def objective(xs, us):
        value = base(xs, us)
        if beta == 0:
            return value
        Z = state_action_pairs(xs, us)
        if stats is not None:
            Z = stats.normalize_z(Z)
        return value - beta * np.asarray(predict_distance(regressor, Z, sigma)).sum(axis=-1)

    return objective


def variance_penalty_objective(reward_fn: TrajectoryReward, ens: Ensemble, beta: float):
    base = model_return_objective(reward_fn)

    def objective(xs, us):
        value = base(xs, us)
        if beta == 0:
            return value
        var = ensemble_variance(ens, xs[..., : us.shape[-2], :], us)
        return value - beta * np.asarray(var).sum(axis=-1)

    return objective
