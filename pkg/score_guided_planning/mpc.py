"""
Executing plans on the true system: open loop and receding horizon (MPC).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from tqdm import tqdm

from .environments import Env
from .errors import NumericError
from .planners import Plan

logger = logging.getLogger(__name__)

# planner(x_current, u_init or None, horizon) -> Plan
PlannerFn = Callable[[np.ndarray, "np.ndarray | None", int], Plan]


@dataclass
class Execution:
    """A trajectory executed on the true environment."""

    x_seq: np.ndarray
    u_seq: np.ndarray
    cost: float
    dynamics_error: float = float("nan")
    planned_cost: float = float("nan")
    log: pd.DataFrame = field(default_factory=pd.DataFrame)
    truncated: bool = False
    reason: str = ""

    def metrics(self) -> dict:
        return {
            "planned_cost": self.planned_cost,
            "executed_cost": self.cost,
            "dynamics_error": self.dynamics_error,
            "steps": int(self.u_seq.shape[0]),
            "truncated": self.truncated,
        }


def one_step_errors(model, x_seq: np.ndarray, u_seq: np.ndarray) -> np.ndarray:
    """``||model(x_t, u_t) - x_{t+1}||`` along an executed trajectory."""
    T = u_seq.shape[0]
    if T == 0:
        return np.zeros(0)
    predicted = np.asarray(model.predict(x_seq[:T], u_seq), dtype=np.float64)
    return np.linalg.norm(predicted - x_seq[1 : T + 1], axis=-1)


def execute_open_loop(
    env: Env, x1, u_seq, model=None, *, planned_cost: float = float("nan")
) -> Execution:
    """
    Apply ``u_seq`` to the true environment from ``x1``.

    The run stops early (``truncated``) if the true state becomes non-finite.
    With a ``model`` the mean one-step dynamics error along the executed
    trajectory is reported.
    """
    u_seq = np.asarray(u_seq, dtype=np.float64)
    xs = [np.asarray(x1, dtype=np.float64)]
    truncated, reason = False, ""
    for t in range(u_seq.shape[0]):
        x_next = np.asarray(env.step(xs[-1], u_seq[t]), dtype=np.float64)
        if not np.all(np.isfinite(x_next)):
            truncated, reason = True, f"non-finite state at step {t + 1}"
            logger.warning(f"Open-loop execution truncated: {reason}")
            break
        xs.append(x_next)
    x_seq = np.stack(xs)
    executed_u = u_seq[: x_seq.shape[0] - 1]
    err = one_step_errors(model, x_seq, executed_u) if model is not None else np.array([])
    return Execution(
        x_seq,
        executed_u,
        env.cost(x_seq, executed_u),
        float(np.mean(err)) if err.size else float("nan"),
        planned_cost,
        truncated=truncated,
        reason=reason,
    )


def shift_controls(u_seq: np.ndarray, T: int) -> np.ndarray:
    """Drop the applied first action and pad by repeating the last, to length ``T``."""
    u = np.asarray(u_seq, dtype=np.float64)[1:]
    if u.shape[0] == 0:
        return np.repeat(np.asarray(u_seq)[-1:], T, axis=0)
    if u.shape[0] >= T:
        return u[:T]
    return np.concatenate([u, np.repeat(u[-1:], T - u.shape[0], axis=0)])


def mpc_run(
    env: Env,
    planner: PlannerFn,
    T: int,
    episode_length: int | None = None,
    *,
    warm_start: bool = True,
    shrinking: bool = False,
    model=None,
    progress: bool = False,
) -> Execution:
    """
    Receding-horizon control: plan from the current true state, apply the
    first action to the environment, repeat.

    With ``warm_start`` each solve starts from the previous solution shifted
    by one step. ``shrinking`` plans only to the end of the episode instead
    of a fixed ``T`` ahead. A planner failure or a non-finite true state
    truncates the episode; the partial trajectory is returned.
    """
    L = episode_length or env.spec.episode_length
    x = env.start_state()
    xs, us, rows = [x], [], []
    previous: Plan | None = None
    first_plan: Plan | None = None
    truncated, reason = False, ""

    for t in tqdm(range(L), desc=f"MPC on {env.spec.name}", unit="step", disable=not progress):
        horizon = min(T, L - t) if shrinking else T
        u_init = None
        if warm_start and previous is not None:
            u_init = shift_controls(previous.u_seq, horizon)
        try:
            plan = planner(x, u_init, horizon)
        except NumericError as e:
            truncated, reason = True, f"planner failed at step {t}: {e}"
            logger.warning(f"MPC episode truncated: {reason}")
            break
        first_plan = first_plan or plan
        u = plan.u_seq[0]
        x_next = np.asarray(env.step(x, u), dtype=np.float64)
        if not np.all(np.isfinite(x_next)):
            truncated, reason = True, f"non-finite true state at step {t + 1}"
            logger.warning(f"MPC episode truncated: {reason}")
            break
        rows.append(
            {
                "step": t,
                "objective": plan.objective,
                "planned_error": float(np.linalg.norm(plan.x_seq[1] - x_next)),
                "distance_to_goal": env.distance_to_goal(x_next),
            }
        )
        us.append(u)
        xs.append(x_next)
        x = x_next
        previous = plan

    x_seq = np.stack(xs)
    u_seq = np.stack(us) if us else np.zeros((0, env.spec.m))
    err = one_step_errors(model, x_seq, u_seq) if model is not None else np.array([])
    planned_cost = -first_plan.reward if first_plan is not None else float("nan")
    return Execution(
        x_seq,
        u_seq,
        env.cost(x_seq, u_seq),
        float(np.mean(err)) if err.size else float("nan"),
        planned_cost,
        pd.DataFrame(rows, columns=["step", "objective", "planned_error", "distance_to_goal"]),
        truncated,
        reason,
    )
