"""Noisy policy evaluation: propagate sampled trajectories through the learned
models and score a parameter vector by its summed sampled rewards.

One evaluation is one measurement of the noisy objective the optimizer
maximizes; the optimizer's population averaging absorbs the sampling noise, so
a single rollout per evaluation is the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import policies
from .errors import NumericalError

STOCHASTIC = "stochastic"
MEAN_ONLY = "mean-only"
FAILED_SCORE = -1e12


@dataclass(frozen=True, eq=False)
class RolloutConfig:
    """How model rollouts are produced and scored."""

    horizon: int = 40
    rollouts_per_eval: int = 1
    variance_mode: str = STOCHASTIC
    initial_state: np.ndarray = None
    state_clip: np.ndarray | None = None  # pre-multiplied clamp bounds, or None
    record_trajectory: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rollouts_per_eval < 1:
            raise ValueError("rollouts_per_eval must be >= 1")
        if self.variance_mode not in (STOCHASTIC, MEAN_ONLY):
            raise ValueError(f"unknown variance_mode {self.variance_mode!r}")
        object.__setattr__(
            self, "initial_state", np.asarray(self.initial_state, dtype=float).ravel()
        )
        if self.state_clip is not None:
            object.__setattr__(
                self, "state_clip", np.asarray(self.state_clip, dtype=float).ravel()
            )


def clip_bounds_for(task) -> np.ndarray:
    """Divergence guard: sampled states are clamped at 10x the task's state scale."""
    return 10.0 * np.asarray(task.state_bounds, dtype=float)


@dataclass(eq=False)
class EvalResult:
    """Score of one policy evaluation; trajectory kept only when requested."""

    score: float
    diverged: bool = False
    trajectory: list = None  # (state, action, reward) triples of the last rollout


def _single_rollout(policy, dynamics, reward, cfg: RolloutConfig, rng):
    mean_only = cfg.variance_mode == MEAN_ONLY
    x = cfg.initial_state.copy()
    total = 0.0
    trajectory = [] if cfg.record_trajectory else None
    for _ in range(cfg.horizon):
        u = policy(dynamics.transform(x))
        if mean_only:
            delta, _ = dynamics.predict(x, u)
            x_next = x + delta
        else:
            x_next = dynamics.sample(x, u, rng)
        if not np.all(np.isfinite(x_next)):
            return total, True, trajectory
        if cfg.state_clip is not None:
            x_next = np.clip(x_next, -cfg.state_clip, cfg.state_clip)
        if mean_only:
            r = reward.predict(x_next)[0]
        else:
            r = reward.sample(x_next, rng)
        total += r
        if trajectory is not None:
            trajectory.append((x_next.copy(), np.array(u, dtype=float), float(r)))
        x = x_next
    return total, False, trajectory


def evaluate_policy(
    theta,
    setup: policies.PolicySetup,
    dynamics,
    reward,
    cfg: RolloutConfig,
    rng: np.random.Generator,
) -> EvalResult:
    """Score a parameter vector: run rollouts through the learned models from
    the initial state and sum the sampled rewards (mean over rollouts)."""
    policy = policies.decode(setup, theta)
    scores = []
    diverged = False
    trajectory = None
    for _ in range(cfg.rollouts_per_eval):
        total, bad, trajectory = _single_rollout(policy, dynamics, reward, cfg, rng)
        scores.append(total)
        diverged = diverged or bad
    return EvalResult(
        score=float(np.mean(scores)), diverged=diverged, trajectory=trajectory
    )


@dataclass(eq=False)
class PolicyRolloutObjective:
    """Picklable maximization target handed to the optimizer's worker pool."""

    setup: policies.PolicySetup
    dynamics: object
    reward: object
    cfg: RolloutConfig

    def __call__(self, theta, rng) -> float:
        try:
            return evaluate_policy(theta, self.setup, self.dynamics, self.reward, self.cfg, rng).score
        except NumericalError:
            return FAILED_SCORE


@dataclass(eq=False)
class EpisodeLog:
    """Time-indexed record of one episode on the true system."""

    states: np.ndarray   # (T+1, E): states[t] is the state before step t
    actions: np.ndarray  # (T, F)
    rewards: np.ndarray  # (T,): rewards[t] = r(states[t+1])

    @property
    def steps(self) -> int:
        return self.actions.shape[0]

    def cumulative_reward(self) -> float:
        return float(self.rewards.sum())

    def transition_samples(self):
        from .models import TransitionSample

        return [
            TransitionSample(self.states[t], self.actions[t], self.states[t + 1])
            for t in range(self.steps)
        ]

    def reward_pairs(self):
        return list(self.states[1:]), list(self.rewards)


def execute_on_system(policy, task, horizon: int, rng: np.random.Generator,
                      process_noise_std: float = 0.0) -> EpisodeLog:
    """Run a policy (or "random") on the true simulated system for `horizon`
    steps at the control rate, recording states, actions and true rewards."""
    E, F = task.state_dim, task.action_dim
    states = np.empty((horizon + 1, E))
    actions = np.empty((horizon, F))
    rewards = np.empty(horizon)
    x = np.asarray(task.x0, dtype=float).copy()
    states[0] = x
    for t in range(horizon):
        if isinstance(policy, str) and policy == "random":
            u = policies.random_policy_eval(task.u_max, rng)
        else:
            u = np.asarray(policy(task.transform(x)), dtype=float).ravel()
        u = np.clip(u, -task.u_max, task.u_max)
        try:
            x_next = task.step(x, u)
        except Exception as exc:
            raise RuntimeError(f"environment integration failed at step {t}: {exc}") from exc
        if process_noise_std > 0.0:
            x_next = x_next + rng.normal(0.0, process_noise_std, size=E)
        r = task.true_reward(x_next)
        states[t + 1] = x_next
        actions[t] = u
        rewards[t] = r
        x = x_next
    return EpisodeLog(states=states, actions=actions, rewards=rewards)
