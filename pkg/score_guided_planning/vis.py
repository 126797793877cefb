"""
Offline figures rendered from the CSVs an experiment directory holds.

Nothing here plots live; every function reads emitted files (or frames
loaded from them) and writes a PNG.
"""

import logging
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .reports import (  # noqa: E402
    EXECUTED_FILE,
    HISTORY_FILE,
    MPC_LOG_FILE,
    PLAN_FILE,
    SWEEP_FILE,
    VALIDATION_FILE,
    load_csv,
)

logger = logging.getLogger(__name__)


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_trajectories(
    planned: pd.DataFrame,
    executed: pd.DataFrame | None,
    path: str | os.PathLike,
    hole: tuple[float, float, float] | None = None,
    title: str = "Planned vs executed",
) -> Path:
    """
    Planned and executed state trajectories over the first two state columns.

    ``hole`` is ``(center_x, center_y, radius)`` and is drawn as a shaded disc.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    if hole is not None:
        ax.add_patch(plt.Circle(hole[:2], hole[2], color="grey", alpha=0.3, label="hole"))
    for df, style, label in ((planned, "o-", "planned"), (executed, "x--", "executed")):
        if df is None or "x0" not in df:
            continue
        y = df["x1"] if "x1" in df else df["t"]
        ax.plot(df["x0"], y, style, label=label)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1" if "x1" in planned else "t")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_history(
    history: pd.DataFrame, path: str | os.PathLike, reference: float | None = None
) -> Path:
    """Planner objective per iteration; ``reference`` draws a horizontal target line."""
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(history["iteration"], history["objective"], label="objective")
    if "reward" in history:
        ax.plot(history["iteration"], history["reward"], alpha=0.6, label="reward")
    if reference is not None:
        ax.axhline(reference, color="black", linestyle=":", label="reference")
    if "level" in history:
        changes = history["iteration"][history["level"].diff().fillna(0) != 0]
        for it in changes:
            ax.axvline(it, color="grey", alpha=0.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("value")
    ax.legend()
    return _save(fig, path)


def plot_sweep(sweep: pd.DataFrame, parameter: str, path: str | os.PathLike) -> Path:
    """
    Planned and executed cost against the swept parameter on a log axis.

    Zero and infinite values (vanilla and imitation ends of a beta sweep) are
    placed one decade beyond the finite range and labelled.
    """
    values = sweep[parameter].astype(float).to_numpy()
    finite = values[np.isfinite(values) & (values > 0)]
    lo = finite.min() / 10 if finite.size else 1e-3
    hi = finite.max() * 10 if finite.size else 1e3
    xs = np.where(values == 0, lo, np.where(np.isinf(values), hi, values))

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    axes[0].plot(xs, sweep["planned_cost"], "o-", label="planned")
    axes[0].plot(xs, sweep["executed_cost"], "s-", label="executed")
    axes[0].set_ylabel("cost")
    axes[0].legend()
    axes[1].plot(xs, sweep["dynamics_error"], "o-", color="tab:red")
    axes[1].set_ylabel("one-step dynamics error")
    for ax in axes:
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(parameter)
        ticks = list(xs)
        labels = ["0" if v == 0 else ("inf" if np.isinf(v) else f"{v:g}") for v in values]
        ax.set_xticks(ticks, labels, rotation=45)
    return _save(fig, path)


def plot_score_validation(df: pd.DataFrame, path: str | os.PathLike) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(df["sigma"], df["cosine"], "o-", label="near probes")
    ax.plot(df["sigma"], df["far_cosine"], "s--", label="far probes")
    ax.set_xscale("log")
    ax.set_xlabel("sigma")
    ax.set_ylabel("cosine similarity")
    ax.set_ylim(-1.05, 1.05)
    ax.legend()
    return _save(fig, path)


def plot_mpc_log(log: pd.DataFrame, path: str | os.PathLike) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    axes[0].plot(log["step"], log["distance_to_goal"])
    axes[0].set_ylabel("distance to goal")
    axes[1].plot(log["step"], log["planned_error"])
    axes[1].set_ylabel("planned vs true next state")
    axes[1].set_xlabel("step")
    return _save(fig, path)


def render_experiment(
    output_dir: str | os.PathLike, figures_dir: str | os.PathLike | None = None
) -> list[Path]:
    """Render every figure whose source CSV exists in ``output_dir``."""
    out = Path(output_dir)
    figs = Path(figures_dir) if figures_dir else out / "figures"
    written = []
    if (out / PLAN_FILE).exists():
        executed = load_csv(out / EXECUTED_FILE) if (out / EXECUTED_FILE).exists() else None
        plan = load_csv(out / PLAN_FILE)
        written.append(plot_trajectories(plan, executed, figs / "trajectories.png"))
    if (out / HISTORY_FILE).exists():
        history = load_csv(out / HISTORY_FILE)
        if "objective" in history and "iteration" in history:
            written.append(plot_history(history, figs / "history.png"))
    if (out / SWEEP_FILE).exists():
        sweep = load_csv(out / SWEEP_FILE)
        parameter = next((c for c in ("beta", "sigma") if c in sweep), None)
        if parameter is not None:
            written.append(plot_sweep(sweep, parameter, figs / f"sweep_{parameter}.png"))
    if (out / VALIDATION_FILE).exists():
        validation = load_csv(out / VALIDATION_FILE)
        written.append(plot_score_validation(validation, figs / "score_validation.png"))
    if (out / MPC_LOG_FILE).exists():
        written.append(plot_mpc_log(load_csv(out / MPC_LOG_FILE), figs / "mpc.png"))
    if not written:
        logger.warning(f"No plottable CSVs in {out}")
    return written
