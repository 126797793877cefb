"""
Pipelines behind the command-line subcommands.

Every pipeline takes a fully-resolved ``ExperimentConfig`` and works in
``cfg.output_dir``: it copies the config there as ``config.json``, reads the
artifacts earlier commands left (dataset, checkpoints) under fixed names and
writes its own. Metrics of every command are merged into ``metrics.json``
under the command's key (``train-score``, ``plan.sgp``, ``sweep.beta``, ...).
"""

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import datasets
from .checkpoint import checkpoint_paths
from .config import (
    KNOWN_METHODS,
    CemConfig,
    ExperimentConfig,
    PlannerConfig,
    ScheduleConfig,
    config_from_dict,
)
from .datasets import NormStats, TransitionDataset, collect_random, compute_stats
from .distance import (
    DistanceRegressor,
    load_distance_regressor,
    save_distance_regressor,
    squared_distances,
    train_distance_regressor,
)
from .dynamics import (
    Ensemble,
    load_dynamics,
    load_dynamics_result,
    load_ensemble,
    save_dynamics,
    save_ensemble,
    train_dynamics,
    train_ensemble,
)
from .environments import Box, Env, Region, ZeroReward, make_env
from .errors import ConfigError, NumericError, RolloutDivergenceError
from .mpc import Execution, execute_open_loop, mpc_run
from .pixel import write_pgm_sequence
from .planners import (
    Plan,
    cem_plan,
    distance_penalty_objective,
    ensemble_plan,
    exact_penalty_objective,
    model_return_objective,
    sgp_plan,
    state_action_pairs,
    vanilla_plan,
)
from .policy_search import policy_init, start_sampler, train_policy
from .reports import (
    CONFIG_FILE,
    DIAGNOSTICS_FILE,
    EXECUTED_FILE,
    HISTORY_FILE,
    MPC_LOG_FILE,
    PLAN_FILE,
    SWEEP_FILE,
    VALIDATION_FILE,
    load_csv,
    trajectory_frame,
    train_log_file,
    update_metrics,
    write_csv,
    write_json_atomic,
)
from .rng import make_rng
from .score_model import (
    ExactScore,
    LearnedScore,
    NoiseSchedule,
    ScoreOracle,
    eval_score,
    load_score_net,
    make_schedule,
    save_score_net,
    train_score,
    validate_against_exact,
)
from .testbeds import landing_rate

logger = logging.getLogger(__name__)

DATA_FILE = "data.sgpd"
DYNAMICS_NAME = "dynamics"
SCORE_NAME = "score"
ENSEMBLE_NAME = "ensemble"
DISTANCE_NAME = "distance"
POLICY_NAME = "policy"
FRAMES_DIR = "frames"
SWEEP_PARAMETERS = ("beta", "sigma")
IMITATION_BETA = 1.0


@dataclass(frozen=True)
class ExperimentPaths:
    root: Path
    data: Path

    @property
    def dynamics(self) -> Path:
        return self.root / DYNAMICS_NAME

    @property
    def score(self) -> Path:
        return self.root / SCORE_NAME

    @property
    def distance(self) -> Path:
        return self.root / DISTANCE_NAME


def experiment_paths(cfg: ExperimentConfig) -> ExperimentPaths:
    root = Path(cfg.output_dir)
    return ExperimentPaths(root, Path(cfg.data.path) if cfg.data.path else root / DATA_FILE)


def has_checkpoint(prefix: Path) -> bool:
    return all(p.exists() for p in checkpoint_paths(prefix))


def write_config_copy(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json_atomic(out / CONFIG_FILE, cfg.to_dict())
    return out


@contextmanager
def record_numeric_failure(output_dir: Path, command: str) -> Iterator[None]:
    """Write ``diagnostics.json`` when a numeric failure escapes the block, then re-raise."""
    try:
        yield
    except NumericError as e:
        payload = {
            "command": command,
            "error": type(e).__name__,
            "message": str(e),
            "diagnostics": getattr(e, "diagnostics", {}),
            "step": getattr(e, "step", None),
        }
        write_json_atomic(Path(output_dir) / DIAGNOSTICS_FILE, payload)
        logger.error(f"{command} failed: {e} (see {Path(output_dir) / DIAGNOSTICS_FILE})")
        raise


def build_env(cfg: ExperimentConfig) -> Env:
    return make_env(cfg.env.name, cfg.env.params)


def schedule_from_config(sc: ScheduleConfig) -> NoiseSchedule:
    return make_schedule(sc.sigma_max, sc.sigma_min, sc.levels, sc.kind)


def _progress(cfg: ExperimentConfig) -> bool:
    return cfg.dynamics.train.progress


def _data_region(cfg: ExperimentConfig, env: Env) -> Region | None:
    """An explicit data box replaces the environment's box; its holes are kept."""
    if cfg.data.region_low is None or cfg.data.region_high is None:
        return None
    return Region(Box(cfg.data.region_low, cfg.data.region_high), env.data_region.holes)


def gen_data(cfg: ExperimentConfig) -> Path:
    """Collect ``data.n`` random transitions from the true system and save them as ``.sgpd``."""
    out = write_config_copy(cfg)
    env = build_env(cfg)
    region = _data_region(cfg, env)
    dataset = collect_random(env, cfg.data.n, cfg.data.seed, region, progress=_progress(cfg))
    path = datasets.save(dataset, experiment_paths(cfg).data)
    update_metrics(
        out,
        "gen-data",
        {
            "env": env.spec.name,
            "path": str(path),
            "N": dataset.N,
            "n": dataset.n,
            "m": dataset.m,
            "seed": cfg.data.seed,
        },
    )
    return path


def load_data(cfg: ExperimentConfig) -> TransitionDataset:
    path = experiment_paths(cfg).data
    if not path.exists():
        raise FileNotFoundError(f"Dataset {path} not found; run gen-data first")
    return datasets.load(path)


def _normalized_points(dataset: TransitionDataset) -> tuple[np.ndarray, NormStats]:
    stats = compute_stats(dataset)
    return stats.normalize_z(dataset.point_set().points), stats


def _write_train_log(out: Path, model: str, log: pd.DataFrame, resume: bool) -> None:
    path = out / train_log_file(model)
    if resume and path.exists():
        log = pd.concat([load_csv(path), log], ignore_index=True)
    write_csv(path, log)


def run_train_dynamics(cfg: ExperimentConfig, resume: bool = False):
    out = write_config_copy(cfg)
    dataset = load_data(cfg)
    prefix = experiment_paths(cfg).dynamics
    prior = load_dynamics_result(prefix) if resume else None
    with record_numeric_failure(out, "train-dynamics"):
        result = train_dynamics(
            dataset,
            cfg.dynamics.net,
            cfg.dynamics.train,
            mode=cfg.dynamics.mode,
            seed=cfg.seed,
            resume=prior,
        )
    save_dynamics(prefix, result)
    _write_train_log(out, DYNAMICS_NAME, result.log, resume)
    update_metrics(out, "train-dynamics", {**result.metrics, "steps": result.step})
    return result


def run_train_score(cfg: ExperimentConfig, resume: bool = False):
    out = write_config_copy(cfg)
    points, stats = _normalized_points(load_data(cfg))
    prefix = experiment_paths(cfg).score
    prior = load_score_net(prefix) if resume else None
    sc = cfg.score
    with record_numeric_failure(out, "train-score"):
        result = train_score(
            points,
            schedule_from_config(sc.schedule),
            sc.net,
            sc.train,
            seed=cfg.seed,
            conditioning=sc.conditioning,
            scale_output=sc.scale_output,
            stats=stats,
            resume=prior,
        )
    save_score_net(prefix, result)
    _write_train_log(out, SCORE_NAME, result.log, resume)
    tail = result.log["loss"].tail(100)
    final_loss = float(tail.mean()) if len(tail) else None
    update_metrics(out, "train-score", {"steps": result.step, "final_loss": final_loss})
    return result


def run_train_ensemble(cfg: ExperimentConfig) -> Ensemble:
    out = write_config_copy(cfg)
    dataset = load_data(cfg)
    with record_numeric_failure(out, "train-ensemble"):
        ens, results = train_ensemble(
            dataset,
            cfg.ensemble.members,
            cfg.dynamics.net,
            cfg.dynamics.train,
            mode=cfg.dynamics.mode,
            seed=cfg.seed,
            bootstrap=cfg.ensemble.bootstrap,
        )
    save_ensemble(out, ENSEMBLE_NAME, ens, results)
    logs = [r.log.assign(member=i) for i, r in enumerate(results)]
    _write_train_log(out, ENSEMBLE_NAME, pd.concat(logs, ignore_index=True), resume=False)
    update_metrics(
        out,
        "train-ensemble",
        {
            "members": ens.M,
            "bootstrap": ens.bootstrap,
            "val_mse": [r.metrics.get("val_mse") for r in results],
        },
    )
    return ens


def run_train_distance(cfg: ExperimentConfig) -> DistanceRegressor:
    out = write_config_copy(cfg)
    points, stats = _normalized_points(load_data(cfg))
    dc = cfg.distance
    with record_numeric_failure(out, "train-distance"):
        reg, log = train_distance_regressor(
            points,
            schedule_from_config(cfg.score.schedule),
            dc.net,
            dc.train,
            seed=cfg.seed,
            margin=dc.margin,
        )
    save_distance_regressor(experiment_paths(cfg).distance, reg, stats)
    _write_train_log(out, DISTANCE_NAME, log, resume=False)
    steps = int(log["step"].max()) if len(log) else 0
    update_metrics(out, "train-distance", {"steps": steps, "N": len(points)})
    return reg


@dataclass
class PlanningModels:
    """Everything a planner of one method needs, loaded from an experiment directory."""

    env: Env
    model: object
    oracle: ScoreOracle | None = None
    ensemble: Ensemble | None = None
    regressor: DistanceRegressor | None = None
    regressor_stats: NormStats | None = None
    dataset: TransitionDataset | None = None
    sigma: float = float("nan")


def exact_oracle(
    cfg: ExperimentConfig, dataset: TransitionDataset, schedule: NoiseSchedule | None = None
) -> ExactScore:
    schedule = schedule or schedule_from_config(cfg.score.schedule)
    return ExactScore(dataset.point_set().points, schedule, compute_stats(dataset))


def load_planning_models(
    cfg: ExperimentConfig, method: str, oracle_kind: str = "learned"
) -> PlanningModels:
    """
    Load the checkpoints ``method`` plans with.

    ``sgp`` and ``imitation`` use the score oracle (``learned``: the trained
    score net; ``exact``: the closed-form score of the dataset). ``cem``
    penalizes with the distance regressor when one was trained and with the
    exact likelihood otherwise.
    """
    if method not in KNOWN_METHODS:
        raise ConfigError(f"Unknown method {method!r} (expected one of {', '.join(KNOWN_METHODS)})")
    if oracle_kind not in ("learned", "exact"):
        raise ConfigError(f"Unknown oracle {oracle_kind!r} (expected learned or exact)")
    env = build_env(cfg)
    paths = experiment_paths(cfg)
    models = PlanningModels(env, None)
    models.sigma = cfg.score.schedule.sigma_min

    if method == "ensemble":
        models.ensemble = load_ensemble(paths.root, ENSEMBLE_NAME)
        models.model = models.ensemble
    else:
        models.model = load_dynamics(paths.dynamics)

    if method in ("sgp", "imitation"):
        if oracle_kind == "exact":
            models.dataset = load_data(cfg)
            models.oracle = exact_oracle(cfg, models.dataset)
        else:
            models.oracle = LearnedScore(load_score_net(paths.score).model)
    elif method == "cem" and cfg.planner.beta > 0:
        if has_checkpoint(paths.distance) and oracle_kind == "learned":
            models.regressor, models.regressor_stats = load_distance_regressor(paths.distance)
        else:
            models.dataset = load_data(cfg)
            models.oracle = exact_oracle(cfg, models.dataset)
    if method == "imitation" and models.dataset is None:
        models.dataset = load_data(cfg)
    return models


def plan_once(
    method: str,
    models: PlanningModels,
    pcfg: PlannerConfig,
    cem_cfg: CemConfig,
    x1: np.ndarray,
    T: int,
    u_init: np.ndarray | None = None,
) -> Plan:
    """One solve of ``method`` from ``x1`` over ``T`` steps."""
    env = models.env
    box = env.spec.action_box
    nominal = env.nominal_action()
    common = {"T": T, "action_box": box, "u_init": u_init, "nominal": nominal}
    if method == "sgp":
        return sgp_plan(models.model, models.oracle, env.reward, x1, pcfg, **common)
    if method == "vanilla":
        return vanilla_plan(models.model, env.reward, x1, pcfg, **common)
    if method == "imitation":
        icfg = dataclasses.replace(pcfg, beta=IMITATION_BETA)
        return sgp_plan(
            models.model, models.oracle, ZeroReward(), x1, icfg, method="imitation", **common
        )
    if method == "ensemble":
        return ensemble_plan(models.ensemble, env.reward, x1, pcfg, **common)
    if method == "cem":
        if pcfg.beta == 0:
            objective = model_return_objective(env.reward)
        elif models.regressor is not None:
            objective = distance_penalty_objective(
                env.reward, models.regressor, pcfg.beta, models.sigma, models.regressor_stats
            )
        else:
            objective = exact_penalty_objective(env.reward, models.oracle, pcfg.beta)
        start = u_init if u_init is not None else np.tile(nominal, (T, 1))
        return cem_plan(
            models.model, objective, x1, cem_cfg, pcfg.seed, T=T, action_box=box, u_init=start
        )
    raise ConfigError(f"Unknown method {method!r} (expected one of {', '.join(KNOWN_METHODS)})")


def mean_nn_distance(plan: Plan, dataset: TransitionDataset) -> float:
    """Mean distance from the plan's state-action pairs to their nearest dataset pair."""
    Z = state_action_pairs(plan.x_seq, plan.u_seq)
    nearest = np.min(squared_distances(Z, dataset.point_set().points), axis=-1)
    return float(np.mean(np.sqrt(nearest)))


def plan_metrics(method: str, models: PlanningModels, plan: Plan, execution: Execution) -> dict:
    env = models.env
    metrics = {
        "method": method,
        "T": plan.T,
        "objective": plan.objective,
        "penalty": plan.penalty,
        "penalty_source": plan.penalty_source,
        **execution.metrics(),
        "final_distance_to_goal": env.distance_to_goal(execution.x_seq[-1]),
    }
    if hasattr(env, "in_hole"):
        metrics["planned_hole_states"] = int(np.sum(env.in_hole(plan.x_seq)))
        metrics["executed_hole_states"] = int(np.sum(env.in_hole(execution.x_seq)))
    if method == "imitation" and models.dataset is not None:
        metrics["mean_nn_distance"] = mean_nn_distance(plan, models.dataset)
    return metrics


def execution_frame(execution: Execution) -> pd.DataFrame:
    return trajectory_frame(execution.x_seq, execution.u_seq).assign(source="executed")


def _write_trajectories(out: Path, plan: Plan, execution: Execution | None) -> None:
    write_csv(out / PLAN_FILE, plan.frame().assign(source="planned"))
    write_csv(out / HISTORY_FILE, plan.history)
    if execution is not None:
        write_csv(out / EXECUTED_FILE, execution_frame(execution))


def _write_frames(out: Path, env: Env, name: str, x_seq: np.ndarray) -> None:
    if env.spec.name == "pixel":
        write_pgm_sequence(x_seq, out / FRAMES_DIR / name, env.params.grid_size, prefix=name)


def solve_and_execute(
    cfg: ExperimentConfig, method: str, models: PlanningModels
) -> tuple[Plan, Execution]:
    env = models.env
    T = cfg.planner.horizon or env.spec.episode_length
    x1 = env.start_state()
    plan = plan_once(method, models, cfg.planner, cfg.cem, x1, T)
    planned_cost = env.reward.cost(plan.x_seq, plan.u_seq)
    return plan, execute_open_loop(env, x1, plan.u_seq, models.model, planned_cost=planned_cost)


def run_plan(cfg: ExperimentConfig, method: str, oracle_kind: str = "learned") -> dict:
    """Open-loop plan from the start state, executed on the true system."""
    out = write_config_copy(cfg)
    models = load_planning_models(cfg, method, oracle_kind)
    with record_numeric_failure(out, f"plan.{method}"):
        try:
            plan, execution = solve_and_execute(cfg, method, models)
        except RolloutDivergenceError as e:
            if e.last_valid is not None:
                _write_trajectories(out, e.last_valid, None)
            raise
    _write_trajectories(out, plan, execution)
    _write_frames(out, models.env, f"{method}_planned", plan.x_seq)
    _write_frames(out, models.env, f"{method}_executed", execution.x_seq)
    metrics = plan_metrics(method, models, plan, execution)
    update_metrics(out, f"plan.{method}", metrics)
    return metrics


def run_mpc(cfg: ExperimentConfig, method: str, oracle_kind: str = "learned") -> dict:
    """Receding-horizon execution; each step re-plans with ``mpc.iters_per_step`` iterations."""
    out = write_config_copy(cfg)
    models = load_planning_models(cfg, method, oracle_kind)
    env = models.env
    pcfg = dataclasses.replace(cfg.planner, max_iters=cfg.mpc.iters_per_step, lr=cfg.mpc.lr)
    ccfg = dataclasses.replace(cfg.cem, iterations=cfg.mpc.iters_per_step)

    def planner(x, u_init, horizon):
        return plan_once(method, models, pcfg, ccfg, x, horizon, u_init)

    with record_numeric_failure(out, f"mpc.{method}"):
        execution = mpc_run(
            env,
            planner,
            cfg.mpc.horizon,
            cfg.mpc.episode_length,
            warm_start=cfg.mpc.warm_start,
            model=models.model,
            progress=_progress(cfg),
        )
    write_csv(out / EXECUTED_FILE, execution_frame(execution))
    write_csv(out / MPC_LOG_FILE, execution.log)
    _write_frames(out, env, f"{method}_mpc", execution.x_seq)
    metrics = {
        "method": method,
        **execution.metrics(),
        "final_distance_to_goal": env.distance_to_goal(execution.x_seq[-1]),
    }
    if hasattr(env, "in_hole"):
        metrics["executed_hole_states"] = int(np.sum(env.in_hole(execution.x_seq)))
    if execution.truncated:
        metrics["truncated_reason"] = execution.reason
    update_metrics(out, f"mpc.{method}", metrics)
    return metrics


def sweep_point(raw_cfg: dict, parameter: str, value: float, method: str, oracle_kind: str) -> dict:
    """Plan and execute one sweep point; a diverged rollout yields a row of NaNs."""
    cfg = config_from_dict(raw_cfg)
    row = {parameter: value, "method": method}
    if parameter == "beta":
        if math.isinf(value):
            row["method"] = method = "imitation"
        else:
            planner = dataclasses.replace(cfg.planner, beta=float(value))
            cfg = dataclasses.replace(cfg, planner=planner)
        models = load_planning_models(cfg, method, oracle_kind)
    else:
        models = load_planning_models(cfg, "vanilla")
        models.dataset = load_data(cfg)
        models.oracle = exact_oracle(cfg, models.dataset, make_schedule(value, value, 1))
        row["method"] = method = "sgp"
    try:
        plan, execution = solve_and_execute(cfg, method, models)
    except RolloutDivergenceError as e:
        logger.warning(f"Sweep point {parameter}={value} diverged: {e}")
        failed = {"planned_cost": math.nan, "executed_cost": math.nan, "dynamics_error": math.nan}
        return {**row, **failed, "error": str(e)}
    metrics = plan_metrics(method, models, plan, execution)
    keep = (
        "planned_cost",
        "executed_cost",
        "dynamics_error",
        "objective",
        "final_distance_to_goal",
    )
    extra = {k: metrics[k] for k in ("planned_hole_states", "executed_hole_states") if k in metrics}
    return {**row, **{k: metrics[k] for k in keep}, **extra, "error": ""}


def run_sweep(
    cfg: ExperimentConfig,
    parameter: str,
    grid: Sequence[float],
    method: str = "sgp",
    oracle_kind: str = "learned",
    parallel: int = 1,
) -> pd.DataFrame:
    """
    Plan and execute once per grid value.

    ``beta`` sweeps the planner's penalty weight (``inf`` runs imitation mode);
    ``sigma`` plans with the exact score at a single fixed noise level.
    Points run sequentially unless ``parallel > 1`` and the config is not
    ``deterministic``; rows keep grid order either way.
    """
    grid = [float(v) for v in grid]
    if not grid:
        raise ConfigError("Sweep grid is empty")
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Unknown sweep parameter {parameter!r} (expected one of {', '.join(SWEEP_PARAMETERS)})"
        )
    if parameter == "sigma" and any(not (v > 0 and math.isfinite(v)) for v in grid):
        raise ConfigError("Sigma sweep values must be finite and > 0")
    if parameter == "beta" and any(v < 0 or math.isnan(v) for v in grid):
        raise ConfigError("Beta sweep values must be >= 0")
    out = write_config_copy(cfg)
    raw = cfg.to_dict()
    n = len(grid)
    if parallel > 1 and cfg.deterministic:
        logger.info(f"Deterministic mode: running {n} sweep points sequentially, not {parallel}-wide")
        parallel = 1
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(
                pool.map(
                    sweep_point, [raw] * n, [parameter] * n, grid, [method] * n, [oracle_kind] * n
                )
            )
    else:
        rows = [
            sweep_point(raw, parameter, v, method, oracle_kind)
            for v in tqdm(grid, desc=f"Sweeping {parameter}", disable=not _progress(cfg))
        ]
    df = pd.DataFrame(rows)
    write_csv(out / SWEEP_FILE, df)
    finite = df.dropna(subset=["executed_cost"])
    best = finite.loc[finite["executed_cost"].idxmin(), parameter] if len(finite) else None
    update_metrics(out, f"sweep.{parameter}", {"points": n, "method": method, "best_value": best})
    return df


def run_validate_score(cfg: ExperimentConfig, n_probes: int = 200) -> pd.DataFrame:
    """Per-level learned-vs-exact score agreement on near and far probes."""
    out = write_config_copy(cfg)
    net = load_score_net(experiment_paths(cfg).score).model
    dataset = load_data(cfg)
    stats = net.stats or compute_stats(dataset)
    points = stats.normalize_z(dataset.point_set().points)
    df = validate_against_exact(net, points, n_probes=n_probes, seed=cfg.seed)
    write_csv(out / VALIDATION_FILE, df)
    worst_far = None
    if df["far_cosine"].notna().any():
        worst_far = int(df.loc[df["far_cosine"].idxmin(), "level"])
    update_metrics(
        out,
        "validate-score",
        {
            "mean_cosine": float(df["cosine"].mean()),
            "min_cosine": float(df["cosine"].min()),
            "worst_far_level": worst_far,
            "levels": df.to_dict(orient="records"),
        },
    )
    return df


def stability_test(
    cfg: ExperimentConfig,
    oracle_kind: str = "exact",
    n_inits: int = 100,
    tolerance_factor: float = 1e-3,
    max_points: int = 2000,
    step_size: float = 0.5,
) -> dict:
    """
    Annealed descent from random inits over the (normalized) data hull.

    Reports the fraction of runs ending within ``tolerance_factor * sigma_K``
    of a data point. The exact oracle descends on at most ``max_points``
    dataset points; a learned score net uses its own schedule and all points.
    """
    if oracle_kind not in ("learned", "exact"):
        raise ConfigError(f"Unknown oracle {oracle_kind!r} (expected learned or exact)")
    out = write_config_copy(cfg)
    points, _ = _normalized_points(load_data(cfg))
    rng = make_rng(cfg.seed, "probe")
    score_fn = None
    if oracle_kind == "learned":
        net = load_score_net(experiment_paths(cfg).score).model
        schedule = net.schedule

        def score_fn(z, k):
            return eval_score(net, z, k)

    else:
        schedule = schedule_from_config(cfg.score.schedule)
        if len(points) > max_points:
            points = points[rng.choice(len(points), size=max_points, replace=False)]
    inits = rng.uniform(points.min(axis=0), points.max(axis=0), size=(n_inits, points.shape[1]))
    tolerance = tolerance_factor * schedule.sigmas[-1]
    rate, dist = landing_rate(
        points, schedule, inits, tolerance, step_size=step_size, score_fn=score_fn
    )
    metrics = {
        "oracle": oracle_kind,
        "landing_rate": rate,
        "n_inits": n_inits,
        "tolerance": tolerance,
        "median_final_distance": float(np.median(dist)),
        "n_points": len(points),
    }
    update_metrics(out, f"stability-test.{oracle_kind}", metrics)
    return metrics


def run_policy_search(
    cfg: ExperimentConfig, steps: int = 200, n_mc: int = 8, spread: float = 0.0, lr: float = 1e-2
) -> dict:
    """Train a squashed feedback policy through the learned model and report its true cost."""
    out = write_config_copy(cfg)
    env = build_env(cfg)
    paths = experiment_paths(cfg)
    model = load_dynamics(paths.dynamics)
    oracle = LearnedScore(load_score_net(paths.score).model) if cfg.planner.beta > 0 else None
    T = cfg.planner.horizon or env.spec.episode_length
    policy = policy_init(env.spec.n, env.spec.action_box, seed=cfg.seed)
    with record_numeric_failure(out, "policy-search"):
        result = train_policy(
            policy,
            model,
            oracle,
            env.reward,
            start_sampler(env.start_state(), spread),
            T=T,
            steps=steps,
            n_mc=n_mc,
            beta=cfg.planner.beta,
            lr=lr,
            grad_clip=cfg.planner.grad_clip,
            seed=cfg.seed,
            env=env,
            progress=_progress(cfg),
        )
    _write_train_log(out, POLICY_NAME, result.log, resume=False)
    metrics = {"steps": steps, "n_mc": n_mc, "beta": cfg.planner.beta, **result.metrics}
    update_metrics(out, "policy-search", metrics)
    return metrics
