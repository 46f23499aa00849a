"""Data-efficient model-based policy search with black-box optimization.

Learns Gaussian-process dynamics (and optionally reward) models from a handful
of episodes, then maximizes episode return over sampled model rollouts with a
parallel BIPOP-CMA-ES that handles ranking uncertainty.
"""

from .envs import TaskSpec, make_task, task_names
from .gp import ArdKernelParams, GpModel, fit_hyperparams, gp_fit, gp_predict, gp_sample
from .learner import ExperimentRecord, LearnerConfig, replay_experiment, run_experiment
from .models import AnalyticReward, DynamicsModel, RewardModel, TransitionSample
from .optimizer import UncertaintyConfig, maximize
from .policies import PolicySetup, decode, param_space
from .rollout import EvalResult, RolloutConfig, evaluate_policy, execute_on_system

__all__ = [
    "AnalyticReward",
    "ArdKernelParams",
    "DynamicsModel",
    "EvalResult",
    "ExperimentRecord",
    "GpModel",
    "LearnerConfig",
    "PolicySetup",
    "RewardModel",
    "RolloutConfig",
    "TaskSpec",
    "TransitionSample",
    "UncertaintyConfig",
    "decode",
    "evaluate_policy",
    "execute_on_system",
    "fit_hyperparams",
    "gp_fit",
    "gp_predict",
    "gp_sample",
    "make_task",
    "maximize",
    "param_space",
    "replay_experiment",
    "run_experiment",
    "task_names",
]

__version__ = "0.1.0"
