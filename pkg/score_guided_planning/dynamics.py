"""
Learned one-step dynamics ``x' = f(x, u)``, ensembles and their variance.

A ``DynamicsModel`` normalizes its inputs with the dataset's state/action
statistics and its regression target (the step ``x' - x`` in delta mode, or
``x'`` itself in absolute mode) with the target's own statistics, so a
network output of zero means "the average transition".

Every model exposes ``predict(x, u, tape=None)`` taking raw coordinates,
single rows or batches; with a tape (or Var inputs) the call is recorded for
differentiation.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from .adam import (
    AdamState,
    TrainResult,
    adam_step,
    optimizer_arrays,
    optimizer_metadata,
    restore_optimizer,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetConfig, TrainConfig
from .datasets import NormStats, TransitionDataset, _floored_std, compute_stats
from .errors import ConfigError, ContractError, FormatError, ShapeError, TrainingDivergedError
from .mlp import Mlp, forward, mlp_init
from .reports import read_json, write_json_atomic
from .rng import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DynamicsModel:
    net: Mlp
    stats: NormStats
    target_mean: np.ndarray
    target_std: np.ndarray
    mode: str = "delta"

    @property
    def n(self) -> int:
        return self.stats.state_mean.size

    @property
    def m(self) -> int:
        return self.stats.action_mean.size

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters()

    def with_parameters(self, params: Sequence[np.ndarray]) -> "DynamicsModel":
        return dataclasses.replace(self, net=self.net.with_parameters(params))

    def normalized_input(self, x, u):
        xn = ad.div(ad.sub(x, self.stats.state_mean), self.stats.state_std)
        un = ad.div(ad.sub(u, self.stats.action_mean), self.stats.action_std)
        return ad.concat([xn, un], axis=-1)

    def predict(self, x, u, tape: "ad.Tape | None" = None, *, params=None):
        xv, uv = ad.value_of(x), ad.value_of(u)
        if xv.shape[-1:] != (self.n,) or uv.shape[-1:] != (self.m,):
            raise ShapeError(
                f"Model expects x dim {self.n} and u dim {self.m}, got {xv.shape} and {uv.shape}"
            )
        out = forward(self.net, self.normalized_input(x, u), tape, params=params)
        step = ad.add(ad.mul(out, self.target_std), self.target_mean)
        return ad.add(x, step) if self.mode == "delta" else step


@dataclass(frozen=True)
class LinearModel:
    """Known linear dynamics ``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def parameters(self) -> list[np.ndarray]:
        return []

    def predict(self, x, u, tape=None, *, params=None):
        return ad.add(ad.matmul(x, self.A.T), ad.matmul(u, self.B.T))


def single_integrator(n: int = 2) -> LinearModel:
    return LinearModel(np.eye(n), np.eye(n))


def predict(model, x, u, tape: "ad.Tape | None" = None):
    """``x'`` under ``model``; recorded on ``tape`` when given."""
    return model.predict(x, u, tape)


def _targets(dataset: TransitionDataset, mode: str) -> np.ndarray:
    return dataset.next_states - dataset.states if mode == "delta" else dataset.next_states


def dynamics_init(
    n: int,
    m: int,
    net_cfg: NetConfig,
    *,
    mode: str = "delta",
    stats: NormStats | None = None,
    seed: int = 0,
) -> DynamicsModel:
    if mode not in ("delta", "absolute"):
        raise ConfigError(f"Unknown dynamics mode {mode!r} (expected delta or absolute)")
    net = mlp_init([n + m, *net_cfg.hidden, n], net_cfg.activation, seed)
    return DynamicsModel(net, stats or NormStats.identity(n, m), np.zeros(n), np.ones(n), mode)


def train_dynamics(
    dataset: TransitionDataset,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    *,
    mode: str = "delta",
    seed: int = 0,
    resume: TrainResult | None = None,
    label: str = "dynamics",
) -> TrainResult:
    """
    Minibatch Adam on the mean squared (normalized) next-state error.

    A ``val_fraction`` share of transitions is held out; the result's metrics
    carry ``train_mse``, ``val_mse`` and ``val_rmse`` in normalized units.

    Raises:
        TrainingDivergedError: the loss became NaN or infinite.
    """
    if resume is not None:
        model, state, start = resume.model, resume.optimizer, resume.step
    else:
        targets = _targets(dataset, mode)
        t_std = _floored_std(targets, "Target")
        stats = compute_stats(dataset)
        model = dynamics_init(dataset.n, dataset.m, net_cfg, mode=mode, stats=stats, seed=seed)
        model = dataclasses.replace(model, target_mean=targets.mean(axis=0), target_std=t_std)
        state, start = AdamState(lr=train_cfg.lr), 0

    perm = make_rng(seed, "split").permutation(dataset.N)
    n_val = int(round(train_cfg.val_fraction * dataset.N)) if dataset.N > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    inputs = model.normalized_input(dataset.states, dataset.actions)
    norm_targets = (_targets(dataset, model.mode) - model.target_mean) / model.target_std

    def mse(idx: np.ndarray) -> float:
        out = forward(model.net, inputs[idx])
        return float(np.mean((out - norm_targets[idx]) ** 2))

    batch_rng = make_rng(seed, "batch")
    for _ in range(start):
        batch_rng.integers(0, len(train_idx), size=train_cfg.batch_size)

    steps = train_cfg.total_steps(len(train_idx))
    rows = []
    progress = tqdm(
        range(start + 1, start + steps + 1),
        desc=f"Training {label}",
        disable=not train_cfg.progress,
    )
    for step in progress:
        idx = train_idx[batch_rng.integers(0, len(train_idx), size=train_cfg.batch_size)]
        tape = ad.Tape()
        out = forward(model.net, inputs[idx], tape)
        loss = ad.mean(ad.square(ad.sub(out, norm_targets[idx])))
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"{label} loss became {value} at step {step}",
                {"lr": state.lr, "step": step, "model": label},
            )
        grads = tape.backward(loss).params(model.net)
        params, state = adam_step(model.net.parameters(), grads, state)
        model = model.with_parameters(params)
        if step % train_cfg.log_every == 0 or step == start + steps:
            val = mse(val_idx) if n_val else float("nan")
            rows.append({"step": step, "loss": value, "val_mse": val})
            logger.debug(f"{label} step {step}: loss={value:.6f} val_mse={val:.6f}")

    val_mse = mse(val_idx) if n_val else float("nan")
    metrics = {
        "train_mse": mse(train_idx),
        "val_mse": val_mse,
        "val_rmse": math.sqrt(val_mse) if n_val else float("nan"),
    }
    logger.info(
        f"Trained {label}: train MSE {metrics['train_mse']:.3g}, "
        f"validation RMSE {metrics['val_rmse']:.3g}"
    )
    log = pd.DataFrame(rows, columns=["step", "loss", "val_mse"])
    return TrainResult(model, log, state, start + steps, metrics)


@dataclass(frozen=True)
class Ensemble:
    members: tuple[DynamicsModel, ...]
    bootstrap: bool = False

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError(f"An ensemble needs at least 2 members, got {len(self.members)}")
        widths = {m.net.widths for m in self.members}
        if len(widths) > 1:
            raise ConfigError("Ensemble members must share one architecture")

    @property
    def n(self) -> int:
        return self.members[0].n

    @property
    def m(self) -> int:
        return self.members[0].m

    @property
    def M(self) -> int:
        return len(self.members)

    def parameters(self) -> list[np.ndarray]:
        return []

    def member_predictions(self, x, u, tape=None) -> list:
        return [member.predict(x, u, tape) for member in self.members]

    def predict(self, x, u, tape=None, *, params=None):
        """Ensemble mean prediction."""
        preds = self.member_predictions(x, u, tape)
        total = preds[0]
        for p in preds[1:]:
            total = ad.add(total, p)
        return ad.mul(total, 1.0 / self.M)


def train_ensemble(
    dataset: TransitionDataset,
    M: int,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    *,
    mode: str = "delta",
    seed: int = 0,
    bootstrap: bool = False,
    member_seeds: Sequence[int] | None = None,
) -> tuple[Ensemble, list[TrainResult]]:
    """
    Train M members with seeds ``seed + i`` (or ``member_seeds``).

    With ``bootstrap`` each member sees its own resample of the dataset drawn
    from its seed, so a member depends only on its seed and the data.
    """
    if M < 2:
        raise ConfigError(f"An ensemble needs at least 2 members, got {M}")
    seeds = list(member_seeds) if member_seeds is not None else [seed + i for i in range(M)]
    if len(seeds) != M:
        raise ConfigError(f"{len(seeds)} member seeds given for M={M}")

    results = []
    for i, member_seed in enumerate(seeds):
        data = dataset
        if bootstrap:
            idx = make_rng(member_seed, "data").integers(0, dataset.N, size=dataset.N)
            data = dataset.subset(idx)
        result = train_dynamics(
            data, net_cfg, train_cfg, mode=mode, seed=member_seed, label=f"ensemble member {i}"
        )
        results.append(result)
    return Ensemble(tuple(r.model for r in results), bootstrap), results


def ensemble_variance(ens: Ensemble, x, u, tape=None, reduce: str = "mean"):
    """
    Across-member (population) variance of predictions, averaged over output dims.

    ``reduce="max"`` takes the largest per-dimension variance instead (not differentiable).
    """
    preds = ens.member_predictions(x, u, tape)
    total = preds[0]
    for p in preds[1:]:
        total = ad.add(total, p)
    mean = ad.mul(total, 1.0 / ens.M)
    var = ad.square(ad.sub(preds[0], mean))
    for p in preds[1:]:
        var = ad.add(var, ad.square(ad.sub(p, mean)))
    var = ad.mul(var, 1.0 / ens.M)
    if reduce == "mean":
        return ad.mean(var, axis=-1)
    if reduce == "max":
        if isinstance(var, ad.Var):
            raise ContractError("Max-reduced ensemble variance is not differentiable")
        return np.max(var, axis=-1)
    raise ConfigError(f"Unknown variance reduction {reduce!r} (expected mean or max)")


def ensemble_variance_descent(ens: Ensemble, z0, lr: float = 1e-2, iters: int = 500) -> np.ndarray:
    """
    Minimize ``ensemble_variance`` over inputs ``z = (x, u)`` from each row of ``z0``.

    Rows are independent; each is moved with Adam on its own variance.
    """
    z = np.atleast_2d(np.array(z0, dtype=np.float64))
    if z.shape[-1] != ens.n + ens.m:
        raise ShapeError(f"Inputs must have dim n + m = {ens.n + ens.m}, got {z.shape[-1]}")
    state = AdamState(lr=lr)
    for _ in range(iters):
        tape = ad.Tape()
        zv = tape.leaf(z)
        var = ensemble_variance(ens, zv[:, : ens.n], zv[:, ens.n :], tape)
        grad = tape.backward(ad.sum(var)).wrt(zv)
        (z,), state = adam_step([z], [grad], state)
    return z


def _dynamics_metadata(model: DynamicsModel) -> dict:
    return {
        "widths": list(model.net.widths),
        "activation": model.net.activation,
        "mode": model.mode,
        "stats": model.stats.to_dict(),
        "target_mean": model.target_mean.tolist(),
        "target_std": model.target_std.tolist(),
    }


def save_dynamics(prefix, result: TrainResult):
    model = result.model
    metadata = {
        **_dynamics_metadata(model),
        "train_step": result.step,
        "metrics": result.metrics,
        "adam": optimizer_metadata(result.optimizer),
    }
    arrays = list(zip(model.net.parameter_names(), model.parameters()))
    arrays += optimizer_arrays(result.optimizer)
    return save_checkpoint(prefix, "dynamics", arrays, metadata)


def load_dynamics(prefix) -> DynamicsModel:
    return load_dynamics_result(prefix).model


def load_dynamics_result(prefix) -> TrainResult:
    """Model, optimizer state and step counter of a dynamics checkpoint (for resuming)."""
    meta, arrays = load_checkpoint(prefix, kind="dynamics")
    layers = len(meta["widths"]) - 1
    net = Mlp(
        tuple(meta["widths"]),
        meta["activation"],
        tuple(arrays[f"W{i}"] for i in range(layers)),
        tuple(arrays[f"b{i}"] for i in range(layers)),
    )
    model = DynamicsModel(
        net,
        NormStats.from_dict(meta["stats"]),
        np.asarray(meta["target_mean"], dtype=np.float64),
        np.asarray(meta["target_std"], dtype=np.float64),
        meta["mode"],
    )
    log = pd.DataFrame(columns=["step", "loss", "val_mse"])
    optimizer = restore_optimizer(meta.get("adam"), arrays)
    step = int(meta.get("train_step", 0))
    return TrainResult(model, log, optimizer, step, meta.get("metrics") or {})


def save_ensemble(directory, name: str, ens: Ensemble, results: Sequence[TrainResult]) -> Path:
    """One checkpoint per member plus ``<name>.ensemble.json`` listing them."""
    directory = Path(directory)
    members = []
    for i, result in enumerate(results):
        member = f"{name}_member{i}"
        save_dynamics(directory / member, result)
        members.append(member)
    manifest = directory / f"{name}.ensemble.json"
    write_json_atomic(
        manifest, {"kind": "ensemble", "bootstrap": ens.bootstrap, "members": members}
    )
    return manifest


def load_ensemble(directory, name: str) -> Ensemble:
    directory = Path(directory)
    manifest_path = directory / f"{name}.ensemble.json"
    if not manifest_path.exists():
        raise FormatError(f"Ensemble manifest not found: {manifest_path}")
    manifest = read_json(manifest_path)
    if manifest.get("kind") != "ensemble":
        raise FormatError(f"{manifest_path} is not an ensemble manifest")
    members = tuple(load_dynamics(directory / m) for m in manifest["members"])
    return Ensemble(members, manifest.get("bootstrap", False))
