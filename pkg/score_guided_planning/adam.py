"""
Adam optimizer over lists of parameter arrays.

``adam_step`` is pure: it returns new parameter arrays and a new state and
leaves its inputs untouched. It always *descends*; maximizers pass the
negated gradient.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: tuple[np.ndarray, ...] = field(default_factory=tuple)
    v: tuple[np.ndarray, ...] = field(default_factory=tuple)
    t: int = 0


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Raises:
        NumericError: a gradient contains NaN or infinity.
        ShapeError: params and grads do not line up.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"Gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for parameter {i} at Adam step {state.t + 1}")

    m_prev = state.m or tuple(np.zeros_like(p) for p in params)
    v_prev = state.v or tuple(np.zeros_like(p) for p in params)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, dataclasses.replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


def clip_global_norm(
    grads: Sequence[np.ndarray], max_norm: float | None
) -> tuple[list[np.ndarray], float]:
    """Scale ``grads`` to a joint L2 norm of at most ``max_norm``; returns (grads, norm before)."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


@dataclass
class TrainResult:
    """A trained model with its log, optimizer state and the step counter reached."""

    model: object
    log: pd.DataFrame
    optimizer: AdamState
    step: int
    metrics: dict = field(default_factory=dict)


def optimizer_arrays(state: AdamState | None) -> list[tuple[str, np.ndarray]]:
    """Adam moments as named checkpoint arrays (``adam.m<i>``, ``adam.v<i>``)."""
    if state is None or not state.m:
        return []
    first = [(f"adam.m{i}", a) for i, a in enumerate(state.m)]
    second = [(f"adam.v{i}", a) for i, a in enumerate(state.v)]
    return first + second


def optimizer_metadata(state: AdamState | None) -> dict | None:
    if state is None:
        return None
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "t": state.t,
    }


def restore_optimizer(raw: dict | None, arrays: dict[str, np.ndarray]) -> AdamState:
    """Inverse of ``optimizer_arrays`` + ``optimizer_metadata``; fresh state if nothing saved."""
    if not raw:
        return AdamState()

    def moments(prefix: str) -> tuple[np.ndarray, ...]:
        names = sorted(
            (n for n in arrays if n.startswith(prefix)), key=lambda n: int(n[len(prefix) :])
        )
        return tuple(arrays[n] for n in names)

    return AdamState(
        lr=raw["lr"],
        beta1=raw["beta1"],
        beta2=raw["beta2"],
        eps=raw["eps"],
        m=moments("adam.m"),
        v=moments("adam.v"),
        t=raw["t"],
    )
