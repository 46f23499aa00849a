"""Learned probabilistic models of the system: dynamics and immediate reward.

The dynamics model is one independent GP per state dimension, trained on
(transformed state, action) tuples predicting the per-dimension state
difference.  The reward model is a single GP from transformed state to
immediate reward; tasks with a known analytic reward use `AnalyticReward`,
which exposes the same sampling interface with zero variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import gp
from .parallel import run_tasks


@dataclass(frozen=True, eq=False)
class TransitionSample:
    """One observed step: state and action taken, state that followed."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray

    def __post_init__(self):
        for name in ("state", "action", "next_state"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if self.state.size != self.next_state.size:
            raise ValueError("state and next_state dimensions differ")


def _training_arrays(samples: Sequence[TransitionSample], transform):
    X = np.array([np.concatenate([transform(s.state), s.action]) for s in samples])
    Y = np.array([s.next_state - s.state for s in samples])
    return X, Y


def _fit_one_gp(X, y, budget, seed, key):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))
    params = gp.fit_hyperparams(X, y, budget=budget, rng=rng)
    return gp.gp_fit(X, y, params)


@dataclass(eq=False)
class DynamicsModel:
    """E independent GPs on (transform(x), u) -> x' - x."""

    gps: list
    transform: Callable[[np.ndarray], np.ndarray]
    state_dim: int
    action_dim: int

    def _query(self, state, action) -> np.ndarray:
        state = np.asarray(state, dtype=float).ravel()
        action = np.asarray(action, dtype=float).ravel()
        if state.size != self.state_dim or action.size != self.action_dim:
            raise ValueError(
                f"expected state dim {self.state_dim} and action dim {self.action_dim}, "
                f"got {state.size} and {action.size}"
            )
        return np.concatenate([self.transform(state), action])

    def predict(self, state, action) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension posterior mean and variance of the state difference."""
        q = self._query(state, action)
        # all E GPs share the same training inputs, so the squared input
        # differences are computed once and each GP applies its own scales
        dsq = gp.query_sq_diffs(self.gps[0].inputs, q)
        means = np.empty(self.state_dim)
        variances = np.empty(self.state_dim)
        for d, model in enumerate(self.gps):
            means[d], variances[d] = gp.predict_from_sq_diffs(model, dsq)
        return means, variances

    def sample(self, state, action, rng: np.random.Generator) -> np.ndarray:
        """Draw the next state: current state plus a sampled difference."""
        state = np.asarray(state, dtype=float).ravel()
        means, variances = self.predict(state, action)
        z = rng.standard_normal(self.state_dim)
        return state + means + np.sqrt(variances) * z


def predict_transition(model: DynamicsModel, state, action):
    return model.predict(state, action)


def sample_transition(model: DynamicsModel, state, action, rng):
    return model.sample(state, action, rng)


def learn_dynamics(
    samples: Sequence[TransitionSample],
    budget: int,
    rng,
    *,
    transform,
    workers: int = 1,
) -> DynamicsModel:
    """Fit the per-dimension GPs (hyperparameters + exact fit) on transition data.

    `rng` is an integer seed; each output dimension gets its own derived
    stream, so the fit is reproducible regardless of `workers`.
    """
    if len(samples) < 2:
        raise ValueError("learn_dynamics needs at least two transition samples")
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(
        rng.integers(2**31 - 1)
    )
    X, Y = _training_arrays(samples, transform)
    state_dim = Y.shape[1]
    action_dim = samples[0].action.size
    tasks = [(X, Y[:, d], budget, seed, d) for d in range(state_dim)]
    gps = run_tasks(_fit_one_gp, tasks, workers=min(workers, state_dim))
    return DynamicsModel(
        gps=gps, transform=transform, state_dim=state_dim, action_dim=action_dim
    )


@dataclass(eq=False)
class RewardModel:
    """Single GP from transformed state to immediate reward."""

    gp_model: object
    transform: Callable[[np.ndarray], np.ndarray]

    def predict(self, state) -> tuple[float, float]:
        return gp.gp_predict(self.gp_model, self.transform(np.asarray(state, dtype=float).ravel()))

    def sample(self, state, rng: np.random.Generator) -> float:
        return gp.gp_sample(self.gp_model, self.transform(np.asarray(state, dtype=float).ravel()), rng)


@dataclass(eq=False)
class AnalyticReward:
    """Known reward function behind the RewardModel interface (zero variance)."""

    fn: Callable[[np.ndarray], float]

    def predict(self, state) -> tuple[float, float]:
        return float(self.fn(np.asarray(state, dtype=float).ravel())), 0.0

    def sample(self, state, rng: np.random.Generator) -> float:
        return float(self.fn(np.asarray(state, dtype=float).ravel()))


def learn_reward(
    states: Sequence[np.ndarray],
    rewards: Sequence[float],
    budget: int,
    rng,
    *,
    transform,
) -> RewardModel:
    """Fit the reward GP on (state, observed reward) pairs."""
    if len(states) < 2:
        raise ValueError("learn_reward needs at least two observations")
    if len(states) != len(rewards):
        raise ValueError("states and rewards counts differ")
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(
        rng.integers(2**31 - 1)
    )
    Z = np.array([transform(np.asarray(s, dtype=float).ravel()) for s in states])
    y = np.asarray(rewards, dtype=float).ravel()
    model = _fit_one_gp(Z, y, budget, seed, 0)
    return RewardModel(gp_model=model, transform=transform)


def sample_reward(model, state, rng) -> float:
    return model.sample(state, rng)
