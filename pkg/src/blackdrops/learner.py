"""Outer learning loop: bootstrap with random episodes, then alternate
model fitting, policy optimization on model rollouts, and execution of the
best policy on the true system, accumulating data until the task is solved
or the episode budget runs out.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models, optimizer, policies, rollout
from .envs import TaskSpec, make_task

_PURPOSE_ENV = 0
_PURPOSE_FIT = 1
_PURPOSE_OPT = 2
_PURPOSE_REWARD = 3


def _episode_seed(master: int, episode: int, purpose: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=(episode, purpose))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class LearnerConfig:
    """Everything one experiment needs besides the task itself."""

    seed: int = 0
    n_random_episodes: int = 1
    max_episodes: int = 15
    policy_kind: str = "nn"
    hidden: int = 10
    pseudo_points: int | None = None  # None: task default
    opt_budget: int = 10_000
    opt_population: int | None = None
    opt_sigma0: float | None = None
    uncertainty_handling: bool = True
    reeval_fraction: float = 0.1
    rank_change_threshold: float = 0.2
    sigma_inflation: float = 1.5
    elite_reevals: int = 20
    rollouts_per_eval: int = 1
    variance_mode: str = rollout.STOCHASTIC
    gp_budget: int = 2000
    reward_mode: str | None = None  # "analytic" | "learned" | None (task default)
    early_stop: bool = True
    consecutive_successes: int = 2
    warm_start: bool = False
    process_noise_std: float = 0.0

    def __post_init__(self):
        if self.n_random_episodes < 1:
            raise ValueError("n_random_episodes must be >= 1")
        if self.max_episodes < self.n_random_episodes:
            raise ValueError("max_episodes must be >= n_random_episodes")

    def uncertainty_config(self) -> optimizer.UncertaintyConfig | None:
        if not self.uncertainty_handling:
            return None
        return optimizer.UncertaintyConfig(
            reeval_fraction=self.reeval_fraction,
            rank_change_threshold=self.rank_change_threshold,
            sigma_inflation=self.sigma_inflation,
        )


@dataclass
class EpisodeStats:
    """Per-episode bookkeeping row of an experiment."""

    index: int
    kind: str                      # "random" | "optimized"
    theta: list | None
    true_reward: float
    success: bool
    fit_time: float
    opt_time: float
    dynamics_points: int
    reward_points: int
    predicted_score: float | None = None


@dataclass
class ExperimentRecord:
    """Outcome of one full experiment (one replicate)."""

    task: str
    seed: int
    episodes: list = field(default_factory=list)
    solved_at: int | None = None          # first successful episode, 1-based
    stopped_early: bool = False
    aborted: str | None = None
    config: dict = field(default_factory=dict)
    config_divergence: list = field(default_factory=list)

    def episode_rewards(self) -> list[float]:
        return [e.true_reward for e in self.episodes]

    def best_reward_curve(self, n_episodes: int | None = None) -> list[float]:
        """Running best true reward per episode; flat after early stop."""
        rewards = self.episode_rewards()
        best, curve = -np.inf, []
        for r in rewards:
            best = max(best, r)
            curve.append(best)
        if n_episodes is not None and curve:
            curve = curve[:n_episodes] + [curve[-1]] * max(0, n_episodes - len(curve))
        return curve

    def total_fit_time(self) -> float:
        return sum(e.fit_time for e in self.episodes)

    def total_opt_time(self) -> float:
        return sum(e.opt_time for e in self.episodes)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "seed": self.seed,
            "solved_at": self.solved_at,
            "stopped_early": self.stopped_early,
            "aborted": self.aborted,
            "config": self.config,
            "config_divergence": self.config_divergence,
            "episodes": [asdict(e) for e in self.episodes],
        }

    @staticmethod
    def from_dict(data: dict) -> "ExperimentRecord":
        rec = ExperimentRecord(
            task=data["task"],
            seed=data["seed"],
            solved_at=data.get("solved_at"),
            stopped_early=data.get("stopped_early", False),
            aborted=data.get("aborted"),
            config=data.get("config", {}),
            config_divergence=data.get("config_divergence", []),
        )
        rec.episodes = [EpisodeStats(**e) for e in data.get("episodes", [])]
        return rec


def episode_csv_path(out_dir: Path, index: int) -> Path:
    return Path(out_dir) / f"episode_{index:02d}.csv"


def write_episode_csv(path, log: rollout.EpisodeLog):
    """One row per step: t, state, action, next state, true reward."""
    E = log.states.shape[1]
    F = log.actions.shape[1]
    header = (
        ["t"]
        + [f"x{i}" for i in range(E)]
        + [f"u{i}" for i in range(F)]
        + [f"xn{i}" for i in range(E)]
        + ["r"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(log.steps):
            writer.writerow(
                [t]
                + [repr(v) for v in log.states[t]]
                + [repr(v) for v in log.actions[t]]
                + [repr(v) for v in log.states[t + 1]]
                + [repr(float(log.rewards[t]))]
            )


def read_episode_csv(path, state_dim: int, action_dim: int) -> rollout.EpisodeLog:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing episode log: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    T = len(rows)
    states = np.empty((T + 1, state_dim))
    actions = np.empty((T, action_dim))
    rewards = np.empty(T)
    for t, row in enumerate(rows):
        try:
            states[t] = [float(row[f"x{i}"]) for i in range(state_dim)]
            actions[t] = [float(row[f"u{i}"]) for i in range(action_dim)]
            states[t + 1] = [float(row[f"xn{i}"]) for i in range(state_dim)]
            rewards[t] = float(row["r"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"corrupt episode log {path} at row {t}: {exc}") from exc
    return rollout.EpisodeLog(states=states, actions=actions, rewards=rewards)


def _learn_models(task, cfg, data, reward_pairs, episode, workers):
    """Fit dynamics (and reward when not analytic); returns (dyn, rew, seconds)."""
    t0 = time.perf_counter()
    dynamics = models.learn_dynamics(
        data,
        cfg.gp_budget,
        _episode_seed(cfg.seed, episode, _PURPOSE_FIT),
        transform=task.transform,
        workers=workers,
    )
    learned = task.reward_learned if cfg.reward_mode is None else cfg.reward_mode == "learned"
    if learned:
        reward_model = models.learn_reward(
            reward_pairs[0],
            reward_pairs[1],
            cfg.gp_budget,
            _episode_seed(cfg.seed, episode, _PURPOSE_REWARD),
            transform=task.transform,
        )
    else:
        reward_model = models.AnalyticReward(task.true_reward)
    return dynamics, reward_model, time.perf_counter() - t0


def _optimize_policy(task, cfg, dynamics, reward_model, episode, workers, warm_theta):
    """Run the rollout-objective maximization for one episode."""
    setup = policies.PolicySetup(
        kind=cfg.policy_kind,
        input_dim=task.input_dim,
        action_dim=task.action_dim,
        u_max=task.u_max,
        hidden=cfg.hidden,
        pseudo_points=cfg.pseudo_points or task.pseudo_points,
        input_bounds=task.policy_input_bounds,
    )
    dim, box = policies.param_space(setup)
    roll_cfg = rollout.RolloutConfig(
        horizon=task.horizon,
        rollouts_per_eval=cfg.rollouts_per_eval,
        variance_mode=cfg.variance_mode,
        initial_state=task.x0,
        state_clip=rollout.clip_bounds_for(task),
    )
    objective = rollout.PolicyRolloutObjective(setup, dynamics, reward_model, roll_cfg)
    t0 = time.perf_counter()
    result = optimizer.maximize(
        objective,
        dim,
        init_box=box,
        budget=cfg.opt_budget,
        seed=_episode_seed(cfg.seed, episode, _PURPOSE_OPT),
        cfg=cfg.uncertainty_config(),
        workers=workers,
        lam=cfg.opt_population,
        sigma0=cfg.opt_sigma0,
        init_mean=warm_theta if cfg.warm_start else None,
        elite_reevals=cfg.elite_reevals,
    )
    return setup, result, time.perf_counter() - t0


def run_experiment(
    cfg: LearnerConfig,
    task: TaskSpec,
    workers: int = 1,
    out_dir=None,
) -> ExperimentRecord:
    """Full learning run on one task; optionally persists per-episode CSV logs
    and a JSON summary under `out_dir`."""
    record = ExperimentRecord(task=task.name, seed=cfg.seed, config=asdict(cfg))
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    data: list[models.TransitionSample] = []
    reward_states: list[np.ndarray] = []
    reward_values: list[float] = []
    consecutive = 0
    warm_theta = None

    for episode in range(1, cfg.max_episodes + 1):
        env_rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(episode, _PURPOSE_ENV))
        )
        fit_time = opt_time = 0.0
        theta = None
        predicted = None
        try:
            if episode <= cfg.n_random_episodes:
                kind = "random"
                log = rollout.execute_on_system(
                    "random", task, task.horizon, env_rng, cfg.process_noise_std
                )
            else:
                kind = "optimized"
                dynamics, reward_model, fit_time = _learn_models(
                    task, cfg, data, (reward_states, reward_values), episode, workers
                )
                setup, result, opt_time = _optimize_policy(
                    task, cfg, dynamics, reward_model, episode, workers, warm_theta
                )
                theta = result.best_theta
                predicted = result.best_score
                warm_theta = theta
                policy = policies.decode(setup, theta)
                log = rollout.execute_on_system(
                    policy, task, task.horizon, env_rng, cfg.process_noise_std
                )
        except Exception as exc:
            record.aborted = f"episode {episode}: {exc}"
            break

        data.extend(log.transition_samples())
        pair_states, pair_rewards = log.reward_pairs()
        reward_states.extend(pair_states)
        reward_values.extend(pair_rewards)

        success = task.is_success(log.rewards)
        record.episodes.append(
            EpisodeStats(
                index=episode,
                kind=kind,
                theta=None if theta is None else [float(v) for v in theta],
                true_reward=log.cumulative_reward(),
                success=bool(success),
                fit_time=fit_time,
                opt_time=opt_time,
                dynamics_points=len(data),
                reward_points=len(reward_values),
                predicted_score=predicted,
            )
        )
        if out_path is not None:
            write_episode_csv(episode_csv_path(out_path, episode), log)

        if success:
            consecutive += 1
            if record.solved_at is None:
                record.solved_at = episode
        else:
            consecutive = 0
        if cfg.early_stop and consecutive >= cfg.consecutive_successes:
            record.stopped_early = True
            break

    if out_path is not None:
        with open(out_path / "summary.json", "w") as fh:
            json.dump(record.to_dict(), fh, indent=2)
    return record


def replay_experiment(run_dir, cfg: LearnerConfig | None = None, workers: int = 1) -> ExperimentRecord:
    """Refit models from a stored run's episode logs and re-optimize each
    episode's policy offline; no interaction with the true system happens.

    With the stored config and seed the recomputed policy parameters are
    identical to the original run's.  Any config field changed relative to the
    stored snapshot is listed in ``config_divergence``.
    """
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"missing run summary: {summary_path}")
    with open(summary_path) as fh:
        stored = ExperimentRecord.from_dict(json.load(fh))

    stored_cfg = LearnerConfig(**stored.config)
    if cfg is None:
        cfg = stored_cfg
    divergence = sorted(
        key for key, val in asdict(cfg).items() if asdict(stored_cfg).get(key) != val
    )

    task = make_task(stored.task)
    replayed = ExperimentRecord(
        task=stored.task, seed=cfg.seed, config=asdict(cfg), config_divergence=divergence
    )

    data: list[models.TransitionSample] = []
    reward_states: list[np.ndarray] = []
    reward_values: list[float] = []
    warm_theta = None
    for stats in stored.episodes:
        log = read_episode_csv(
            episode_csv_path(run_dir, stats.index), task.state_dim, task.action_dim
        )
        theta = None
        predicted = None
        fit_time = opt_time = 0.0
        if stats.kind != "random":
            dynamics, reward_model, fit_time = _learn_models(
                task, cfg, data, (reward_states, reward_values), stats.index, workers
            )
            _, result, opt_time = _optimize_policy(
                task, cfg, dynamics, reward_model, stats.index, workers, warm_theta
            )
            theta = [float(v) for v in result.best_theta]
            predicted = result.best_score
            warm_theta = result.best_theta
        data.extend(log.transition_samples())
        pair_states, pair_rewards = log.reward_pairs()
        reward_states.extend(pair_states)
        reward_values.extend(pair_rewards)
        replayed.episodes.append(
            EpisodeStats(
                index=stats.index,
                kind=stats.kind,
                theta=theta,
                true_reward=log.cumulative_reward(),
                success=stats.success,
                fit_time=fit_time,
                opt_time=opt_time,
                dynamics_points=len(data),
                reward_points=len(reward_values),
                predicted_score=predicted,
            )
        )
    replayed.solved_at = stored.solved_at
    replayed.stopped_early = stored.stopped_early
    return replayed
