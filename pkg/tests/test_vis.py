"""
Figure rendering from emitted CSVs. Only checks that PNGs are written without
raising; the focus is the degenerate inputs a sweep or a short run produces.
"""

import math

import numpy as np
import pandas as pd

from score_guided_planning import vis
from score_guided_planning.reports import (
    HISTORY_FILE,
    PLAN_FILE,
    SWEEP_FILE,
    trajectory_frame,
    write_csv,
)


def _sweep(values):
    n = len(values)
    return pd.DataFrame(
        {
            "beta": values,
            "method": ["sgp"] * n,
            "planned_cost": np.linspace(1.0, 2.0, n),
            "executed_cost": np.linspace(3.0, 1.0, n),
            "dynamics_error": np.linspace(0.5, 0.01, n),
        }
    )


def _is_png(path):
    return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_sweep_with_zero_and_inf_ends(tmp_path):
    path = vis.plot_sweep(_sweep([0.0, 1e-2, 1.0, math.inf]), "beta", tmp_path / "sweep.png")
    assert _is_png(path)


def test_sweep_without_finite_positive_values(tmp_path):
    path = vis.plot_sweep(_sweep([0.0, math.inf]), "beta", tmp_path / "nested" / "sweep.png")
    assert _is_png(path)


def test_one_dimensional_trajectories(tmp_path):
    planned = trajectory_frame(np.linspace(0, 1, 6)[:, None], np.full((5, 1), 0.2))
    path = vis.plot_trajectories(planned, None, tmp_path / "traj.png", hole=(0.5, 0.5, 0.1))
    assert _is_png(path)


def test_render_experiment(tmp_path):
    x = np.column_stack([np.linspace(0, 1, 6), np.linspace(0, 1, 6)])
    write_csv(tmp_path / PLAN_FILE, trajectory_frame(x, np.full((5, 2), 0.2)))
    history = pd.DataFrame(
        {"iteration": range(10), "objective": -np.arange(10.0)[::-1], "level": [1] * 5 + [2] * 5}
    )
    write_csv(tmp_path / HISTORY_FILE, history)
    write_csv(tmp_path / SWEEP_FILE, _sweep([0.0, 0.1, math.inf]))
    written = vis.render_experiment(tmp_path)
    assert sorted(p.name for p in written) == ["history.png", "sweep_beta.png", "trajectories.png"]
    assert all(p.parent == tmp_path / "figures" for p in written)


def test_render_empty_directory(tmp_path):
    assert vis.render_experiment(tmp_path) == []
