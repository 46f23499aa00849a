"""Flat JSON experiment configuration.

Five sections -- task, policy, optimizer, rollout, learner -- each a flat
object of scalars.  Every ablation the benchmark supports (policy family,
variance mode, uncertainty handling, budgets, success thresholds, warm start,
process noise) is an explicit field here, so treatments differ only in config.
Unknown sections or fields are rejected by name.
"""

from __future__ import annotations

import json
from pathlib import Path

from .envs import TaskSpec, make_task, task_names
from .errors import ConfigError
from .learner import LearnerConfig
from .rollout import MEAN_ONLY, STOCHASTIC

_TASK_FIELDS = {
    "name": str,
    "process_noise_std": float,
    "success_fraction": float,
    "success_window": int,
    "success_level": float,
    "horizon": int,
}
_POLICY_FIELDS = {
    "kind": str,
    "hidden": int,
    "pseudo_points": int,
}
_OPTIMIZER_FIELDS = {
    "budget": int,
    "population": int,
    "sigma0": float,
    "uncertainty_handling": bool,
    "reeval_fraction": float,
    "rank_change_threshold": float,
    "sigma_inflation": float,
    "elite_reevals": int,
}
_ROLLOUT_FIELDS = {
    "rollouts_per_eval": int,
    "variance_mode": str,
}
_LEARNER_FIELDS = {
    "n_random_episodes": int,
    "max_episodes": int,
    "gp_budget": int,
    "reward_mode": str,
    "early_stop": bool,
    "consecutive_successes": int,
    "warm_start": bool,
}
_SECTIONS = {
    "task": _TASK_FIELDS,
    "policy": _POLICY_FIELDS,
    "optimizer": _OPTIMIZER_FIELDS,
    "rollout": _ROLLOUT_FIELDS,
    "learner": _LEARNER_FIELDS,
}

DEFAULT_CONFIG = {
    "task": {"name": "pendulum"},
    "policy": {"kind": "nn"},
    "optimizer": {},
    "rollout": {},
    "learner": {},
}


def _check_section(name: str, section, schema) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be an object")
    out = {}
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown field '{name}.{key}'")
        want = schema[key]
        if value is None:
            continue
        if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            out[key] = float(value)
        elif want is int and isinstance(value, int) and not isinstance(value, bool):
            out[key] = value
        elif want is bool and isinstance(value, bool):
            out[key] = value
        elif want is str and isinstance(value, str):
            out[key] = value
        else:
            raise ConfigError(
                f"field '{name}.{key}' must be {want.__name__}, got {type(value).__name__}"
            )
    return out


def load_config_file(path) -> dict:
    """Parse and validate a config file; raises ConfigError naming the problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path} at line {exc.lineno}: {exc.msg}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be an object")
    sections = {}
    for name, content in raw.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section '{name}'")
        sections[name] = _check_section(name, content, _SECTIONS[name])
    for name in _SECTIONS:
        sections.setdefault(name, {})
    task = sections["task"]
    if "name" not in task:
        raise ConfigError("field 'task.name' is required")
    if task["name"] not in task_names():
        raise ConfigError(
            f"field 'task.name': unknown task '{task['name']}' (available: {', '.join(task_names())})"
        )
    kind = sections["policy"].get("kind", "nn")
    if kind not in ("nn", "gp"):
        raise ConfigError(f"field 'policy.kind' must be 'nn' or 'gp', got '{kind}'")
    mode = sections["rollout"].get("variance_mode", STOCHASTIC)
    if mode not in (STOCHASTIC, MEAN_ONLY):
        raise ConfigError(
            f"field 'rollout.variance_mode' must be '{STOCHASTIC}' or '{MEAN_ONLY}'"
        )
    reward_mode = sections["learner"].get("reward_mode")
    if reward_mode is not None and reward_mode not in ("analytic", "learned"):
        raise ConfigError("field 'learner.reward_mode' must be 'analytic' or 'learned'")
    return sections


def build_task(sections: dict) -> TaskSpec:
    task = dict(sections["task"])
    name = task.pop("name")
    task.pop("process_noise_std", None)  # lives in LearnerConfig
    if "horizon" in task:
        task["dt"] = 4.0 / task["horizon"]  # keep the 4 s episode
    return make_task(name, **task)


def build_learner_config(sections: dict, seed: int) -> LearnerConfig:
    policy = sections["policy"]
    opt = sections["optimizer"]
    roll = sections["rollout"]
    lrn = sections["learner"]
    try:
        return LearnerConfig(
            seed=seed,
            policy_kind=policy.get("kind", "nn"),
            hidden=policy.get("hidden", 10),
            pseudo_points=policy.get("pseudo_points"),
            opt_budget=opt.get("budget", 10_000),
            opt_population=opt.get("population"),
            opt_sigma0=opt.get("sigma0"),
            uncertainty_handling=opt.get("uncertainty_handling", True),
            reeval_fraction=opt.get("reeval_fraction", 0.1),
            rank_change_threshold=opt.get("rank_change_threshold", 0.2),
            sigma_inflation=opt.get("sigma_inflation", 1.5),
            elite_reevals=opt.get("elite_reevals", 20),
            rollouts_per_eval=roll.get("rollouts_per_eval", 1),
            variance_mode=roll.get("variance_mode", STOCHASTIC),
            n_random_episodes=lrn.get("n_random_episodes", 1),
            max_episodes=lrn.get("max_episodes", 15),
            gp_budget=lrn.get("gp_budget", 2000),
            reward_mode=lrn.get("reward_mode"),
            early_stop=lrn.get("early_stop", True),
            consecutive_successes=lrn.get("consecutive_successes", 2),
            warm_start=lrn.get("warm_start", False),
            process_noise_std=sections["task"].get("process_noise_std", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
