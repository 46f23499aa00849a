"""Dynamics and reward models over the GP layer."""

import math

import numpy as np
import pytest

from blackdrops import envs, models, rollout
from blackdrops.gp import gp_predict
from blackdrops.models import (
    AnalyticReward,
    TransitionSample,
    learn_dynamics,
    learn_reward,
    predict_transition,
    sample_transition,
)


def identity_transform(x):
    return np.asarray(x, dtype=float)


def linear_system_samples(rng, n, state_dim=2):
    """x' = x + 0.1 u with random actions: an exactly learnable map."""
    samples = []
    x = np.zeros(state_dim)
    for _ in range(n):
        u = rng.uniform(-1, 1, size=state_dim)
        x_next = x + 0.1 * u
        samples.append(TransitionSample(x, u, x_next))
        x = x_next if np.all(np.abs(x_next) < 3) else rng.uniform(-1, 1, state_dim)
    return samples


class TestLearnDynamics:
    def test_linear_system_accuracy(self):
        rng = np.random.default_rng(0)
        samples = linear_system_samples(rng, 40)
        model = learn_dynamics(samples, budget=400, rng=1, transform=identity_transform)
        errs = []
        for _ in range(30):
            x = rng.uniform(-1, 1, 2)
            u = rng.uniform(-1, 1, 2)
            mean, _ = model.predict(x, u)
            errs.append(np.linalg.norm(mean - 0.1 * u))
        assert np.mean(errs) <= 1e-2

    def test_single_sample_rejected(self):
        s = TransitionSample([0.0], [0.0], [0.1])
        with pytest.raises(ValueError):
            learn_dynamics([s], budget=10, rng=0, transform=identity_transform)

    def test_interpolates_training_tuples(self):
        rng = np.random.default_rng(5)
        samples = linear_system_samples(rng, 25)
        model = learn_dynamics(samples, budget=400, rng=2, transform=identity_transform)
        s = samples[7]
        mean, _ = model.predict(s.state, s.action)
        observed = s.next_state - s.state
        sigma_n = max(math.sqrt(g.kernel.noise_variance) for g in model.gps)
        assert np.all(np.abs(mean - observed) <= 3 * sigma_n + 1e-6)

    def test_matches_per_dimension_gp_predict(self):
        rng = np.random.default_rng(3)
        samples = linear_system_samples(rng, 15)
        model = learn_dynamics(samples, budget=100, rng=4, transform=identity_transform)
        x = rng.uniform(-1, 1, 2)
        u = rng.uniform(-1, 1, 2)
        mean, var = model.predict(x, u)
        q = np.concatenate([identity_transform(x), u])
        for d in range(2):
            m, v = gp_predict(model.gps[d], q)
            assert mean[d] == m
            assert var[d] == v

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(1)
        model = learn_dynamics(
            linear_system_samples(rng, 10), budget=50, rng=0, transform=identity_transform
        )
        with pytest.raises(ValueError):
            model.predict([0.0], [0.0, 0.0])

    def test_output_permutation_equivariance(self):
        # permuting output dimensions permutes predictions identically
        rng = np.random.default_rng(9)
        samples = linear_system_samples(rng, 12)
        model = learn_dynamics(samples, budget=60, rng=3, transform=identity_transform)
        x, u = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        mean, var = model.predict(x, u)
        swapped = models.DynamicsModel(
            gps=model.gps[::-1],
            transform=model.transform,
            state_dim=2,
            action_dim=2,
        )
        mean_s, var_s = swapped.predict(x, u)
        assert np.array_equal(mean[::-1], mean_s)
        assert np.array_equal(var[::-1], var_s)

    def test_bit_reproducible_retraining(self):
        rng = np.random.default_rng(11)
        samples = linear_system_samples(rng, 20)
        a = learn_dynamics(samples, budget=150, rng=7, transform=identity_transform)
        b = learn_dynamics(samples, budget=150, rng=7, transform=identity_transform)
        for ga, gb in zip(a.gps, b.gps):
            assert np.array_equal(ga.alpha, gb.alpha)
            assert np.array_equal(ga.kernel.length_scales, gb.kernel.length_scales)

    def test_workers_do_not_change_result(self):
        rng = np.random.default_rng(13)
        samples = linear_system_samples(rng, 16)
        a = learn_dynamics(samples, budget=100, rng=5, transform=identity_transform, workers=1)
        b = learn_dynamics(samples, budget=100, rng=5, transform=identity_transform, workers=2)
        for ga, gb in zip(a.gps, b.gps):
            assert np.array_equal(ga.alpha, gb.alpha)


@pytest.fixture(scope="module")
def linear_model():
    rng = np.random.default_rng(2)
    return learn_dynamics(
        linear_system_samples(rng, 30), budget=300, rng=6, transform=identity_transform
    )


class TestSampleTransition:

    def test_determinism_cloned_stream(self, linear_model):
        model = linear_model
        x, u = np.array([0.2, -0.1]), np.array([0.5, 0.5])
        a = sample_transition(model, x, u, np.random.default_rng(42))
        b = sample_transition(model, x, u, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_moments(self, linear_model):
        model = linear_model
        x, u = np.array([0.2, -0.1]), np.array([0.5, 0.5])
        mean, var = predict_transition(model, x, u)
        stream = np.random.default_rng(3)
        draws = np.array([sample_transition(model, x, u, stream) for _ in range(100_000)])
        deltas = draws - x
        for d in range(2):
            se = math.sqrt(var[d] / draws.shape[0])
            assert abs(deltas[:, d].mean() - mean[d]) < 3 * se + 1e-12
            se_var = var[d] * math.sqrt(2.0 / (draws.shape[0] - 1))
            assert abs(deltas[:, d].var() - var[d]) < 3 * se_var + 1e-12


class TestRewardModels:
    def test_learned_reward_accuracy(self):
        # pendulum reward learned from 40 states: held-out error small
        task = envs.make_task("pendulum")
        rng = np.random.default_rng(0)
        states = [rng.uniform([-8, -math.pi], [8, math.pi]) for _ in range(40)]
        rewards = [task.true_reward(s) for s in states]
        model = learn_reward(states, rewards, budget=600, rng=1, transform=task.transform)
        held_out = [rng.uniform([-8, -math.pi], [8, math.pi]) for _ in range(50)]
        errs = [model.predict(s)[0] - task.true_reward(s) for s in held_out]
        assert math.sqrt(np.mean(np.square(errs))) <= 0.05

    def test_constant_rewards(self):
        rng = np.random.default_rng(1)
        states = [rng.uniform(-1, 1, 2) for _ in range(10)]
        model = learn_reward(states, [0.5] * 10, budget=100, rng=0, transform=identity_transform)
        mean, _ = model.predict(states[0])
        assert mean == pytest.approx(0.5, abs=0.05)

    def test_zero_noise_interpolation(self):
        rng = np.random.default_rng(4)
        states = [rng.uniform(-1, 1, 2) * (1 + i) for i in range(8)]
        rewards = [float(np.sin(s).sum()) for s in states]
        model = learn_reward(states, rewards, budget=400, rng=2, transform=identity_transform)
        sigma_n = math.sqrt(model.gp_model.kernel.noise_variance)
        mean, _ = model.predict(states[3])
        assert abs(mean - rewards[3]) <= 3 * sigma_n + 1e-6

    def test_sample_reward_determinism_and_moments(self):
        rng = np.random.default_rng(7)
        states = [rng.uniform(-1, 1, 2) for _ in range(12)]
        rewards = [float(s[0] ** 2) for s in states]
        model = learn_reward(states, rewards, budget=200, rng=3, transform=identity_transform)
        q = np.array([0.1, 0.9])
        a = models.sample_reward(model, q, np.random.default_rng(5))
        b = models.sample_reward(model, q, np.random.default_rng(5))
        assert a == b
        mean, var = model.predict(q)
        stream = np.random.default_rng(6)
        draws = np.array([models.sample_reward(model, q, stream) for _ in range(100_000)])
        se = math.sqrt(var / draws.size) if var > 0 else 1e-9
        assert abs(draws.mean() - mean) < 3 * se + 1e-9

    def test_analytic_reward_zero_variance(self):
        task = envs.make_task("pendulum")
        ar = AnalyticReward(task.true_reward)
        x = np.array([0.0, math.pi])
        mean, var = ar.predict(x)
        assert var == 0.0
        assert ar.sample(x, np.random.default_rng(0)) == mean
        assert mean == pytest.approx(1.0, abs=1e-12)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            learn_reward([np.zeros(2)], [1.0, 2.0], budget=10, rng=0, transform=identity_transform)


class TestModelImprovesWithData:
    def test_pendulum_one_step_rmse_improves(self):
        # median over seeds: held-out error after 3 episodes <= after 1 episode
        task = envs.make_task("pendulum")
        rmse_1, rmse_3 = [], []
        for seed in range(10):
            logs = [
                rollout.execute_on_system(
                    "random", task, task.horizon, np.random.default_rng((seed, ep))
                )
                for ep in range(3)
            ]
            samples = [s for log in logs for s in log.transition_samples()]
            held_log = rollout.execute_on_system(
                "random", task, task.horizon, np.random.default_rng((seed, 99))
            )
            held = held_log.transition_samples()

            def rmse(model):
                errs = []
                for s in held:
                    mean, _ = model.predict(s.state, s.action)
                    errs.append(np.sum((mean - (s.next_state - s.state)) ** 2))
                return math.sqrt(np.mean(errs))

            m1 = learn_dynamics(samples[:40], budget=200, rng=seed, transform=task.transform)
            m3 = learn_dynamics(samples, budget=200, rng=seed, transform=task.transform)
            rmse_1.append(rmse(m1))
            rmse_3.append(rmse(m3))
        assert np.median(rmse_3) <= np.median(rmse_1)
