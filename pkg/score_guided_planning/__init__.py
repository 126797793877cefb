# Import everything we want to expose at package level
from .config import ExperimentConfig, PlannerConfig, load_experiment_config
from .datasets import PointSet, TransitionDataset, collect_random
from .distance import (
    annealed_descent,
    error_bound,
    exact_score,
    perturbed_log_likelihood,
    softmin_distance_sq,
)
from .dynamics import DynamicsModel, Ensemble, train_dynamics, train_ensemble
from .environments import make_env
from .errors import SgpError
from .mpc import execute_open_loop, mpc_run
from .planners import (
    Plan,
    cem_plan,
    ensemble_plan,
    penalized_value,
    rollout,
    sgp_gradient,
    sgp_plan,
)
from .score_model import ExactScore, LearnedScore, make_schedule, train_score

# Define what's available when someone does "from score_guided_planning import *"
__all__ = [
    "DynamicsModel",
    "Ensemble",
    "ExactScore",
    "ExperimentConfig",
    "LearnedScore",
    "Plan",
    "PlannerConfig",
    "PointSet",
    "SgpError",
    "TransitionDataset",
    "annealed_descent",
    "cem_plan",
    "collect_random",
    "ensemble_plan",
    "error_bound",
    "exact_score",
    "execute_open_loop",
    "load_experiment_config",
    "make_env",
    "make_schedule",
    "mpc_run",
    "penalized_value",
    "perturbed_log_likelihood",
    "rollout",
    "sgp_gradient",
    "sgp_plan",
    "softmin_distance_sq",
    "train_dynamics",
    "train_ensemble",
    "train_score",
]
