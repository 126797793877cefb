"""
Command-line interface for the Score-Guided Planning toolkit.

One experiment lives in one output directory. Subcommands build on each
other's artifacts there::

    gen-data        random transitions from the true system (data.sgpd)
    train-dynamics  dynamics model checkpoint + dynamics_train_log.csv
    train-score     multi-level score net checkpoint + score_train_log.csv
    train-ensemble  bootstrap ensemble of dynamics models
    train-distance  smoothed-distance regressor (CEM penalty)
    plan            open-loop plan, executed on the true system
    mpc             receding-horizon execution
    sweep           beta / sigma sweeps -> sweep.csv
    validate-score  learned vs exact score per noise level
    stability-test  landing rate of annealed descent on the data
    policy-search   feedback policy trained through the learned model
    plot            PNG figures from the CSVs in the output directory

The config comes from ``--config`` (TOML or JSON) or, if absent, from the
example config named after ``--env``; flags and ``--set key=value`` override
single fields. The fully-resolved config is copied into the output directory
as ``config.json`` and can be passed back with ``--config`` to reproduce the
run.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

import argparse
import json
import logging
import os
import sys

from dotenv import load_dotenv

from . import experiments, vis
from .config import (
    KNOWN_ENVS,
    KNOWN_METHODS,
    ExperimentConfig,
    example_config_path,
    load_experiment_config,
    with_override,
)
from .errors import EXIT_OK, ConfigError, exit_code_for
from .reports import format_frame, format_metrics_table, output_dir_lock

logger = logging.getLogger(__name__)

COMMANDS = (
    "gen-data",
    "train-dynamics",
    "train-score",
    "train-ensemble",
    "train-distance",
    "plan",
    "mpc",
    "sweep",
    "validate-score",
    "stability-test",
    "policy-search",
    "plot",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Experiment config (.toml or .json)")
    parser.add_argument(
        "--env",
        choices=KNOWN_ENVS,
        help="Environment; also picks config/<env>.toml when --config is absent",
    )
    parser.add_argument(
        "--output-dir", help="Experiment output directory (default: $SGP_OUTPUT_DIR or ./runs)"
    )
    parser.add_argument("--seed", type=int, help="Seed for data collection, training and planning")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config field, e.g. --set planner.beta=0.1 (VALUE is parsed as JSON)",
    )
    parser.add_argument(
        "--log-level",
        default=os.environ.get("SGP_LOG_LEVEL", "WARNING"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level",
    )
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")


def _add_planning(parser: argparse.ArgumentParser, default_method: str = "sgp") -> None:
    parser.add_argument(
        "--method", choices=KNOWN_METHODS, default=default_method, help="Planner to run"
    )
    parser.add_argument(
        "--oracle",
        choices=["learned", "exact"],
        default="learned",
        help="Score source: the trained score net, or the closed-form score of the dataset",
    )
    parser.add_argument("--beta", type=float, help="Penalty weight (overrides planner.beta)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Score-Guided Planning", formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="Collect random transitions from the true system")
    _add_common(p)
    p.add_argument("--n", type=int, help="Number of transitions (overrides data.n)")

    for name, help_text in (
        ("train-dynamics", "Train the dynamics model"),
        ("train-score", "Train the multi-level score net"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument(
            "--resume", action="store_true", help="Continue from the existing checkpoint"
        )

    p = sub.add_parser("train-ensemble", help="Train a bootstrap ensemble of dynamics models")
    _add_common(p)
    p = sub.add_parser("train-distance", help="Train the smoothed-distance regressor")
    _add_common(p)

    p = sub.add_parser("plan", help="Plan open loop and execute on the true system")
    _add_common(p)
    _add_planning(p)

    p = sub.add_parser("mpc", help="Receding-horizon execution on the true system")
    _add_common(p)
    _add_planning(p)

    p = sub.add_parser("sweep", help="Sweep beta or sigma and record planned/executed costs")
    _add_common(p)
    _add_planning(p)
    p.add_argument(
        "--param", choices=experiments.SWEEP_PARAMETERS, default="beta", help="Parameter to sweep"
    )
    p.add_argument(
        "--grid",
        required=True,
        help="Comma-separated values, e.g. 0,1e-2,1,inf (beta=inf runs imitation mode)",
    )
    p.add_argument(
        "--parallel", type=int, default=1, help="Worker processes; 1 runs points sequentially"
    )

    p = sub.add_parser(
        "validate-score", help="Compare the learned score with the exact score per level"
    )
    _add_common(p)
    p.add_argument("--probes", type=int, default=200, help="Probes per level")

    p = sub.add_parser("stability-test", help="Landing rate of annealed descent on the dataset")
    _add_common(p)
    p.add_argument(
        "--oracle", choices=["learned", "exact"], default="exact", help="Score used for descent"
    )
    p.add_argument("--inits", type=int, default=100, help="Number of random initializations")
    p.add_argument(
        "--tolerance",
        type=float,
        default=1e-3,
        help="Landing tolerance as a multiple of the final sigma",
    )

    p = sub.add_parser("policy-search", help="Train a feedback policy through the learned model")
    _add_common(p)
    p.add_argument("--beta", type=float, help="Penalty weight (overrides planner.beta)")
    p.add_argument("--steps", type=int, default=200, help="Gradient steps")
    p.add_argument("--samples", type=int, default=8, help="Monte-Carlo initial states per step")
    p.add_argument(
        "--spread", type=float, default=0.0, help="Std of the initial-state perturbation"
    )
    p.add_argument("--lr", type=float, default=1e-2, help="Adam learning rate")

    p = sub.add_parser("plot", help="Render figures from the CSVs in the output directory")
    _add_common(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def parse_grid(text: str) -> list[float]:
    """``"0, 1e-2, inf"`` -> ``[0.0, 0.01, inf]``."""
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise ConfigError("Sweep grid is empty")
    try:
        return [float(v) for v in values]
    except ValueError as e:
        raise ConfigError(f"Invalid sweep grid {text!r}: {e}") from None


def _parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"Override {item!r} must look like KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or the env's example config), then ``--set`` overrides, then dedicated flags."""
    if args.config:
        cfg = load_experiment_config(args.config)
    elif args.env and example_config_path(args.env).exists():
        cfg = load_experiment_config(example_config_path(args.env))
    else:
        cfg = ExperimentConfig()
    if args.env and cfg.env.name != args.env:
        cfg = with_override(cfg, "env.name", args.env)
        cfg = with_override(cfg, "env.params", {})

    for item in args.overrides:
        cfg = with_override(cfg, *_parse_override(item))
    if args.output_dir:
        cfg = with_override(cfg, "output_dir", args.output_dir)
    if args.seed is not None:
        cfg = with_override(cfg, "seed", args.seed)
        cfg = with_override(cfg, "data.seed", args.seed)
        cfg = with_override(cfg, "planner.seed", args.seed)
    if getattr(args, "n", None) is not None:
        cfg = with_override(cfg, "data.n", args.n)
    if getattr(args, "beta", None) is not None:
        cfg = with_override(cfg, "planner.beta", args.beta)
    if args.no_progress:
        for section in ("dynamics", "score", "distance"):
            cfg = with_override(cfg, f"{section}.train.progress", False)
    return cfg


def run_command(args: argparse.Namespace, cfg: ExperimentConfig) -> None:
    """Dispatch one subcommand and print its summary."""
    command = args.command
    if command == "gen-data":
        path = experiments.gen_data(cfg)
        print(f"Wrote {cfg.data.n} transitions to {path}")
    elif command == "train-dynamics":
        result = experiments.run_train_dynamics(cfg, resume=args.resume)
        print(format_metrics_table({**result.metrics, "steps": result.step}, "Dynamics model"))
    elif command == "train-score":
        result = experiments.run_train_score(cfg, resume=args.resume)
        print(f"Score net trained to step {result.step}")
    elif command == "train-ensemble":
        ens = experiments.run_train_ensemble(cfg)
        print(f"Trained an ensemble of {ens.M} dynamics models")
    elif command == "train-distance":
        experiments.run_train_distance(cfg)
        print("Distance regressor trained")
    elif command == "plan":
        metrics = experiments.run_plan(cfg, args.method, args.oracle)
        print(format_metrics_table(metrics, f"Plan ({args.method})"))
    elif command == "mpc":
        metrics = experiments.run_mpc(cfg, args.method, args.oracle)
        print(format_metrics_table(metrics, f"MPC ({args.method})"))
    elif command == "sweep":
        grid = parse_grid(args.grid)
        df = experiments.run_sweep(
            cfg, args.param, grid, args.method, args.oracle, args.parallel
        )
        print(format_frame(df.drop(columns=["error"], errors="ignore")))
    elif command == "validate-score":
        df = experiments.run_validate_score(cfg, n_probes=args.probes)
        print(format_frame(df))
    elif command == "stability-test":
        metrics = experiments.stability_test(
            cfg, args.oracle, n_inits=args.inits, tolerance_factor=args.tolerance
        )
        print(format_metrics_table(metrics, "Stability test"))
    elif command == "policy-search":
        metrics = experiments.run_policy_search(cfg, args.steps, args.samples, args.spread, args.lr)
        print(format_metrics_table(metrics, "Policy search"))
    elif command == "plot":
        experiments.write_config_copy(cfg)
        for path in vis.render_experiment(cfg.output_dir):
            print(f"Wrote {path}")
    else:
        raise ConfigError(f"Unknown command {command!r}")
    print(f"Results in {cfg.output_dir}")


def main(argv=None) -> int:
    """
    Entry point for the command line interface.

    Returns the process exit code instead of raising, so ``sgp.py`` and the
    tests can both call it.
    """
    load_dotenv()
    args = parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        cfg = resolve_config(args)
        with output_dir_lock(cfg.output_dir):
            run_command(args, cfg)
        return EXIT_OK
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        return 1
    except Exception as e:
        code = exit_code_for(e)
        if code == 1:
            logger.exception(f"Fatal error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
