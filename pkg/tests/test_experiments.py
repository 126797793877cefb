"""End-to-end pipelines on a tiny integrator experiment."""

import dataclasses
import json
import math

import numpy as np
import pandas as pd
import pytest

from score_guided_planning import experiments
from score_guided_planning.errors import ConfigError, StepSizeError
from score_guided_planning.reports import read_json

from conftest import small_experiment_config


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Data, dynamics, score net, ensemble and distance regressor, trained once."""
    cfg = small_experiment_config(tmp_path_factory.mktemp("experiment"))
    experiments.gen_data(cfg)
    experiments.run_train_dynamics(cfg)
    experiments.run_train_score(cfg)
    experiments.run_train_ensemble(cfg)
    experiments.run_train_distance(cfg)
    return cfg


def metrics_of(cfg):
    return read_json(f"{cfg.output_dir}/metrics.json")


def test_training_artifacts(trained):
    out = experiments.experiment_paths(trained).root
    assert (out / "data.sgpd").exists() and (out / "config.json").exists()
    for name in ("dynamics", "score", "distance", "ensemble_member0", "ensemble_member1"):
        assert (out / f"{name}.manifest.json").exists() and (out / f"{name}.weights.bin").exists()
    assert (out / "ensemble.ensemble.json").exists()
    metrics = metrics_of(trained)
    assert metrics["gen-data"]["N"] == 300
    assert metrics["train-dynamics"]["steps"] == 100
    assert metrics["train-score"]["steps"] == 50
    assert metrics["train-ensemble"]["members"] == 2
    ensemble_log = pd.read_csv(out / "ensemble_train_log.csv")
    assert set(ensemble_log["member"]) == {0, 1}


def test_config_copy_reloads_to_the_same_config(trained):
    from score_guided_planning.config import load_experiment_config

    assert load_experiment_config(f"{trained.output_dir}/config.json") == trained


@pytest.mark.parametrize(
    "method, oracle",
    [
        ("sgp", "learned"),
        ("sgp", "exact"),
        ("vanilla", "learned"),
        ("imitation", "exact"),
        ("ensemble", "learned"),
        ("cem", "learned"),
        ("cem", "exact"),
    ],
)
def test_plan_methods(trained, method, oracle):
    metrics = experiments.run_plan(trained, method, oracle)
    out = experiments.experiment_paths(trained).root
    assert metrics["method"] == method and metrics["T"] == 5
    assert math.isfinite(metrics["executed_cost"]) and math.isfinite(metrics["planned_cost"])
    stored = metrics_of(trained)[f"plan.{method}"]
    assert stored["executed_cost"] == pytest.approx(metrics["executed_cost"])
    plan = pd.read_csv(out / "plan.csv")
    executed = pd.read_csv(out / "executed.csv")
    assert len(plan) == 6 and set(plan["source"]) == {"planned"}
    assert len(executed) == 6 and set(executed["source"]) == {"executed"}
    if method == "imitation":
        assert metrics["mean_nn_distance"] >= 0


def test_unknown_method_and_oracle(trained):
    with pytest.raises(ConfigError):
        experiments.load_planning_models(trained, "shooting")
    with pytest.raises(ConfigError):
        experiments.load_planning_models(trained, "sgp", "oracle")


def test_mpc(trained):
    metrics = experiments.run_mpc(trained, "sgp", "exact")
    out = experiments.experiment_paths(trained).root
    assert metrics["steps"] == 4 and not metrics["truncated"]
    log = pd.read_csv(out / "mpc_log.csv")
    assert log["step"].tolist() == [0, 1, 2, 3]


def test_beta_sweep_with_imitation_end(trained):
    df = experiments.run_sweep(trained, "beta", [0.0, 0.1, math.inf], "sgp", "learned")
    assert df["beta"].tolist() == [0.0, 0.1, math.inf]
    assert df["method"].tolist() == ["sgp", "sgp", "imitation"]
    assert {"planned_cost", "executed_cost", "dynamics_error", "error"} <= set(df.columns)
    written = pd.read_csv(f"{trained.output_dir}/sweep.csv")
    assert len(written) == 3
    best = metrics_of(trained)["sweep.beta"]["best_value"]
    # an infinite best value is stored as null
    assert best in (0.0, 0.1, None)


def test_sigma_sweep_uses_a_single_exact_level(trained):
    df = experiments.run_sweep(trained, "sigma", [0.05, 0.2], "sgp", "exact")
    assert df["sigma"].tolist() == [0.05, 0.2] and (df["method"] == "sgp").all()
    assert df["executed_cost"].notna().all()


def test_deterministic_sweep_ignores_parallel(trained, monkeypatch, caplog):
    def no_pool(*args, **kwargs):
        raise AssertionError("process pool used in deterministic mode")

    monkeypatch.setattr(experiments, "ProcessPoolExecutor", no_pool)
    assert trained.deterministic
    with caplog.at_level("INFO", logger="score_guided_planning.experiments"):
        df = experiments.run_sweep(trained, "sigma", [0.2, 0.05], "sgp", "exact", parallel=2)
    assert df["sigma"].tolist() == [0.2, 0.05]
    assert "sequentially" in caplog.text


def test_parallel_sweep_uses_a_pool_when_not_deterministic(trained, monkeypatch):
    used = []

    class SerialPool:
        def __init__(self, max_workers):
            used.append(max_workers)

        def __enter__(self):
            return self

        def __exit__(self, *exc):
            return False

        def map(self, fn, *iterables):
            return map(fn, *iterables)

    monkeypatch.setattr(experiments, "ProcessPoolExecutor", SerialPool)
    cfg = dataclasses.replace(trained, deterministic=False)
    df = experiments.run_sweep(cfg, "sigma", [0.2, 0.05], "sgp", "exact", parallel=2)
    assert used == [2]
    assert df["sigma"].tolist() == [0.2, 0.05]


@pytest.mark.parametrize(
    "parameter, grid",
    [
        ("beta", []),
        ("gamma", [1.0]),
        ("sigma", [0.0]),
        ("sigma", [math.inf]),
        ("beta", [-1.0]),
        ("beta", [math.nan]),
    ],
)
def test_invalid_sweeps(trained, parameter, grid):
    with pytest.raises(ConfigError):
        experiments.run_sweep(trained, parameter, grid)


def test_validate_score(trained):
    df = experiments.run_validate_score(trained, n_probes=20)
    assert df["level"].tolist() == [1, 2, 3]
    validation = metrics_of(trained)["validate-score"]
    assert -1.0 <= validation["min_cosine"] <= validation["mean_cosine"] <= 1.0
    assert len(validation["levels"]) == 3


def test_stability_test_with_the_exact_score(trained):
    metrics = experiments.stability_test(trained, "exact", n_inits=10)
    assert metrics["n_inits"] == 10 and 0.0 <= metrics["landing_rate"] <= 1.0
    assert metrics["tolerance"] == pytest.approx(1e-3 * trained.score.schedule.sigma_min)
    assert "stability-test.exact" in metrics_of(trained)
    with pytest.raises(ConfigError):
        experiments.stability_test(trained, "magic")


def test_policy_search(trained):
    metrics = experiments.run_policy_search(trained, steps=5, n_mc=2)
    assert {"true_cost_before", "true_cost_after", "steps"} <= set(metrics)
    assert (experiments.experiment_paths(trained).root / "policy_train_log.csv").exists()


def test_resumed_score_training_appends_to_the_log(trained, tmp_path):
    cfg = dataclasses.replace(trained, output_dir=str(tmp_path))
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, path=str(experiments.experiment_paths(trained).data)),
    )
    experiments.run_train_score(cfg)
    result = experiments.run_train_score(cfg, resume=True)
    assert result.step == 100
    log = pd.read_csv(tmp_path / "score_train_log.csv")
    assert log["step"].tolist() == list(range(1, 101))


def test_missing_dataset(experiment_config):
    with pytest.raises(FileNotFoundError, match="gen-data"):
        experiments.run_train_dynamics(experiment_config)


def test_numeric_failure_writes_diagnostics(tmp_path):
    with pytest.raises(StepSizeError):
        with experiments.record_numeric_failure(tmp_path, "stability-test"):
            raise StepSizeError("diverged")
    payload = json.loads((tmp_path / "diagnostics.json").read_text())
    assert payload["command"] == "stability-test" and payload["error"] == "StepSizeError"


def test_data_region_override_keeps_the_holes(experiment_config):
    cfg = dataclasses.replace(
        experiment_config, env=dataclasses.replace(experiment_config.env, name="pit", params={})
    )
    cfg = dataclasses.replace(
        cfg, data=dataclasses.replace(cfg.data, region_low=[0.2, 0.2], region_high=[0.8, 0.8])
    )
    experiments.gen_data(cfg)
    data = experiments.load_data(cfg)
    env = experiments.build_env(cfg)
    assert np.all((data.states >= 0.2) & (data.states <= 0.8))
    assert not np.any(env.in_hole(data.states))
