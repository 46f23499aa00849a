"""Policy families: bounds, determinism, decode layout."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blackdrops.policies import (
    GpPolicyParams,
    NnPolicyParams,
    PolicySetup,
    decode,
    gp_policy_eval,
    nn_policy_eval,
    param_space,
    random_policy_eval,
    squash,
)

NN_SETUP = PolicySetup(kind="nn", input_dim=3, action_dim=1, u_max=[2.5], hidden=10)
GP_SETUP = PolicySetup(
    kind="gp", input_dim=3, action_dim=1, u_max=[2.5], pseudo_points=10,
    input_bounds=[[-10, 10], [-1, 1], [-1, 1]],
)


def nn_oracle(theta, setup, x):
    """Independent two-loop matrix multiply evaluation."""
    d, h, f = setup.input_dim, setup.hidden, setup.action_dim
    W0 = [[theta[i * d + j] for j in range(d)] for i in range(h)]
    b0 = theta[h * d : h * d + h]
    off = h * d + h
    W1 = [[theta[off + i * h + j] for j in range(h)] for i in range(f)]
    b1 = theta[off + f * h :]
    hidden = [math.tanh(sum(W0[i][j] * x[j] for j in range(d)) + b0[i]) for i in range(h)]
    out = [
        setup.u_max[i] * math.tanh(sum(W1[i][j] * hidden[j] for j in range(h)) + b1[i])
        for i in range(f)
    ]
    return np.array(out)


class TestNnPolicy:
    def test_zero_theta_gives_zero_action(self):
        n, _ = param_space(NN_SETUP)
        params = NnPolicyParams.from_flat(np.zeros(n), NN_SETUP)
        assert np.all(nn_policy_eval(params, [1.0, -0.3, 2.0]) == 0.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_bounded_always(self, seed):
        rng = np.random.default_rng(seed)
        n, _ = param_space(NN_SETUP)
        params = NnPolicyParams.from_flat(rng.normal(0, 3, n), NN_SETUP)
        u = nn_policy_eval(params, rng.normal(0, 5, 3))
        # mathematically strict, but float tanh rounds to exactly 1.0
        assert np.all(np.abs(u) <= NN_SETUP.u_max)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_matches_two_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, _ = param_space(NN_SETUP)
        theta = rng.normal(size=n)
        x = rng.normal(size=3)
        params = NnPolicyParams.from_flat(theta, NN_SETUP)
        assert np.allclose(nn_policy_eval(params, x), nn_oracle(theta, NN_SETUP, x), atol=1e-12)

    def test_saturation_at_large_scale(self):
        rng = np.random.default_rng(1)
        n, _ = param_space(NN_SETUP)
        theta = rng.normal(size=n)
        d, h = NN_SETUP.input_dim, NN_SETUP.hidden
        theta[h * d + h :] *= 1e3  # blow up the output layer
        params = NnPolicyParams.from_flat(theta, NN_SETUP)
        u = nn_policy_eval(params, [0.5, 0.2, -0.1])
        assert abs(abs(u[0]) - 2.5) < 1e-6

    def test_dimension_mismatch(self):
        n, _ = param_space(NN_SETUP)
        params = NnPolicyParams.from_flat(np.zeros(n), NN_SETUP)
        with pytest.raises(ValueError):
            nn_policy_eval(params, [1.0])

    def test_param_count(self):
        n, box = param_space(NN_SETUP)
        assert n == 10 * 4 + 1 * 11 == 51
        assert box.shape == (51, 2)
        assert np.all(box == [-1.0, 1.0])

    def test_pure_function(self):
        rng = np.random.default_rng(2)
        n, _ = param_space(NN_SETUP)
        theta = rng.normal(size=n)
        x = rng.normal(size=3)
        a = decode(NN_SETUP, theta)(x)
        b = decode(NN_SETUP, theta)(x)
        assert np.array_equal(a, b)


class TestSquash:
    @given(st.floats(-100, 100))
    @settings(max_examples=100, deadline=None)
    def test_range(self, v):
        assert -1.0 <= squash(v) <= 1.0

    def test_peak(self):
        assert squash(math.pi / 2) == pytest.approx(1.0, abs=1e-12)


class TestGpPolicy:
    def test_zero_targets_give_zero_action(self):
        n, _ = param_space(GP_SETUP)
        theta = np.zeros(n)
        theta[: 10 * 3] = np.random.default_rng(0).normal(size=30)  # inputs only
        params = GpPolicyParams.from_flat(theta, GP_SETUP)
        assert np.allclose(gp_policy_eval(params, [0.0, 1.0, 0.0]), 0.0, atol=1e-15)

    def test_isolated_pseudo_point_value(self):
        # query one pseudo-input with every other far away: the posterior mean
        # collapses to t * sv / (sv + noise)
        m, d = 10, 3
        rng = np.random.default_rng(3)
        inputs = np.zeros((m, d))
        inputs[1:] = 1e4 + 100.0 * np.arange(1, m)[:, None]  # >= 10 length scales away
        targets = np.zeros((m, 1))
        targets[0] = 0.8
        theta = np.concatenate(
            [inputs.ravel(), targets.ravel(), np.zeros(d), [0.0]]  # ls = 1, sv = 1
        )
        params = GpPolicyParams.from_flat(theta, GP_SETUP)
        u = gp_policy_eval(params, np.zeros(d))
        expected = 2.5 * squash(0.8 * 1.0 / (1.0 + 0.01))
        assert u[0] == pytest.approx(expected, rel=1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_bounded_always(self, seed):
        rng = np.random.default_rng(seed)
        n, box = param_space(GP_SETUP)
        theta = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.uniform(size=n)
        params = GpPolicyParams.from_flat(theta, GP_SETUP)
        u = gp_policy_eval(params, rng.normal(0, 2, 3))
        assert np.all(np.abs(u) <= GP_SETUP.u_max + 1e-12)

    def test_param_count_pendulum(self):
        n, _ = param_space(GP_SETUP)
        assert n == 10 * 3 + 10 * 1 + 3 + 1 == 44

    def test_length_scales_positive(self):
        n, _ = param_space(GP_SETUP)
        rng = np.random.default_rng(5)
        params = GpPolicyParams.from_flat(rng.normal(0, 2, n), GP_SETUP)
        assert np.all(params.length_scales > 0)
        assert params.signal_variance > 0
        assert params.noise_variance == 0.01


class TestRandomPolicy:
    def test_within_bounds(self):
        rng = np.random.default_rng(0)
        draws = np.array([random_policy_eval([2.5], rng)[0] for _ in range(1000)])
        assert np.all(np.abs(draws) <= 2.5)

    def test_cloned_stream_determinism(self):
        a = random_policy_eval([1.0, 2.0], np.random.default_rng(7))
        b = random_policy_eval([1.0, 2.0], np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_mean_near_zero(self):
        rng = np.random.default_rng(1)
        draws = np.array([random_policy_eval([2.0], rng)[0] for _ in range(100_000)])
        se = 2.0 / math.sqrt(3.0) / math.sqrt(draws.size)
        assert abs(draws.mean()) < 3 * se


class TestParamSpace:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            param_space(PolicySetup(kind="rbf", input_dim=2, action_dim=1, u_max=[1.0]))
        with pytest.raises(ValueError):
            decode(PolicySetup(kind="rbf", input_dim=2, action_dim=1, u_max=[1.0]), np.zeros(3))

    def test_gp_box_layout(self):
        n, box = param_space(GP_SETUP)
        assert box.shape == (n, 2)
        assert np.all(box[:30] == np.tile(GP_SETUP.input_bounds, (10, 1)))
        assert np.all(box[30:40] == [-1.0, 1.0])
        assert np.allclose(box[40:43], [math.log(0.1), math.log(2.0)])
        assert np.allclose(box[43], [math.log(0.5), math.log(2.0)])
