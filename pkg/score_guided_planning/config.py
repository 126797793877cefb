"""
Experiment configuration: nested dataclasses loaded from TOML or JSON.

A config file mirrors the dataclass tree, one table per section::

    seed = 0
    [env]
    name = "pit"
    [planner]
    beta = 0.1

Keys the dataclasses do not define are rejected rather than ignored, so a
typo never silently falls back to a default. The fully-resolved config is
written next to every run's outputs as ``config.json``; loading that file
reproduces the run.
"""

import copy
import dataclasses
import json
import logging
import math
import tomllib
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .paths import get_default_config_dir, get_default_output_dir

logger = logging.getLogger(__name__)

KNOWN_ENVS = ("pit", "integrator", "cartpole", "pixel")
KNOWN_METHODS = ("sgp", "vanilla", "ensemble", "cem", "imitation")
ACTIVATIONS = ("tanh", "relu", "softplus")


@dataclass
class EnvConfig:
    name: str = "pit"
    # Overrides for the environment's parameter dataclass (e.g. hole_radius, dt, grid_size)
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in KNOWN_ENVS:
            raise ConfigError(
                f"Unknown environment {self.name!r} (expected one of {', '.join(KNOWN_ENVS)})"
            )


@dataclass
class DataConfig:
    path: str = ""
    n: int = 20_000
    seed: int = 1
    # Optional latent-state box [low..], [high..]; defaults to the environment's data region
    region_low: list[float] | None = None
    region_high: list[float] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"data.n must be >= 1, got {self.n}")


@dataclass
class NetConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"Unknown activation {self.activation!r} (expected one of {', '.join(ACTIVATIONS)})"
            )
        if any(int(w) < 1 for w in self.hidden):
            raise ConfigError(f"Hidden widths must be >= 1, got {self.hidden}")


@dataclass
class TrainConfig:
    steps: int = 2000
    # When set, overrides steps with epochs * ceil(N / batch_size)
    epochs: int | None = None
    batch_size: int = 256
    lr: float = 1e-3
    val_fraction: float = 0.1
    log_every: int = 50
    progress: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0 or (self.epochs is not None and self.epochs < 0):
            raise ConfigError("steps and epochs must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def total_steps(self, n_samples: int) -> int:
        if self.epochs is None:
            return self.steps
        return self.epochs * max(1, math.ceil(n_samples / self.batch_size))


@dataclass
class ScheduleConfig:
    sigma_max: float = 0.3
    sigma_min: float = 0.05
    levels: int = 10
    kind: str = "geometric"

    def __post_init__(self):
        if self.kind not in ("geometric", "cosine"):
            raise ConfigError(f"Unknown schedule kind {self.kind!r} (expected geometric or cosine)")


@dataclass
class DynamicsConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(hidden=[64, 64, 32]))
    train: TrainConfig = field(default_factory=TrainConfig)
    # "delta" predicts x' - x, "absolute" predicts x'
    mode: str = "delta"

    def __post_init__(self):
        if self.mode not in ("delta", "absolute"):
            raise ConfigError(f"Unknown dynamics mode {self.mode!r} (expected delta or absolute)")


@dataclass
class ScoreConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(hidden=[128, 128, 128]))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=4000, lr=1e-3))
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    conditioning: str = "multiplicative"
    # Scale the trunk output by 1/sigma_k
    scale_output: bool = True

    def __post_init__(self):
        if self.conditioning not in ("multiplicative", "concat"):
            raise ConfigError(
                f"Unknown conditioning {self.conditioning!r} (expected multiplicative or concat)"
            )


@dataclass
class EnsembleConfig:
    members: int = 6
    bootstrap: bool = False

    def __post_init__(self):
        if self.members < 2:
            raise ConfigError(f"An ensemble needs at least 2 members, got {self.members}")


@dataclass
class DistanceConfig:
    net: NetConfig = field(default_factory=lambda: NetConfig(hidden=[64, 64]))
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(steps=3000, batch_size=128, lr=3e-3)
    )
    # Sampling box is the normalized data hull widened by this much on every side
    margin: float = 0.5


@dataclass
class PlannerConfig:
    beta: float = 0.1
    lr: float = 0.05
    max_iters: int = 300
    # Planning horizon; None uses the environment's episode length
    horizon: int | None = None
    seed: int = 0
    # Action box; None uses the environment's
    action_low: list[float] | None = None
    action_high: list[float] | None = None
    grad_clip: float | None = 100.0
    init: str = "zeros"
    init_scale: float = 0.1
    normalized_penalty: bool = False

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError(f"beta must be a finite value >= 0, got {self.beta}")
        if self.lr <= 0:
            raise ConfigError(f"planner lr must be > 0, got {self.lr}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.init not in ("zeros", "gaussian", "nominal"):
            raise ConfigError(f"Unknown init {self.init!r} (expected zeros, gaussian or nominal)")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0 or null, got {self.grad_clip}")


@dataclass
class CemConfig:
    population: int = 10
    elites: int = 4
    std: float = 0.05
    iterations: int = 100
    update_std: bool = False

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ConfigError(
                f"Need 1 <= elites <= population, got {self.elites} of {self.population}"
            )
        if self.std <= 0:
            raise ConfigError(f"CEM std must be > 0, got {self.std}")


@dataclass
class MpcConfig:
    horizon: int = 5
    # None uses the environment's episode length
    episode_length: int | None = None
    iters_per_step: int = 50
    lr: float = 0.1
    warm_start: bool = True


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    output_dir: str = ""
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if not self.output_dir:
            self.output_dir = get_default_output_dir()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _from_dict(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _from_dict(hint, value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid [{where}] section: {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, raw, "")


def load_experiment_config(path: str | Path | None = None) -> ExperimentConfig:
    """
    Load an experiment config from ``.toml`` or ``.json``; missing file yields defaults.

    Raises:
        ConfigError: unknown keys, invalid values, or an unsupported file suffix.
    """
    if path is None:
        return ExperimentConfig()
    config_path = Path(path)
    if not config_path.exists():
        logger.warning(f"Config {config_path} not found; using defaults")
        return ExperimentConfig()

    if config_path.suffix == ".toml":
        with open(config_path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"Invalid TOML in {config_path}: {e}") from e
    elif config_path.suffix == ".json":
        with open(config_path, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Invalid JSON in {config_path}: {e}") from e
    else:
        raise ConfigError(
            f"Unsupported config format {config_path.suffix!r}. Expected .toml or .json"
        )
    return config_from_dict(raw)


def example_config_path(name: str) -> Path:
    return Path(get_default_config_dir()) / f"{name}.toml"


def with_override(cfg: ExperimentConfig, dotted_key: str, value: Any) -> ExperimentConfig:
    """
    Copy of ``cfg`` with one field replaced, e.g. ``with_override(cfg, "planner.beta", 0.1)``.

    The result is re-validated, so an invalid value raises ConfigError.
    """
    raw = copy.deepcopy(cfg.to_dict())
    node = raw
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"Unknown config section {part!r} in {dotted_key!r}")
        node = node[part]
    if parts[-1] not in node and not (len(parts) >= 2 and parts[-2] == "params"):
        raise ConfigError(f"Unknown config key {dotted_key!r}")
    node[parts[-1]] = value
    return config_from_dict(raw)
