"""Parameterized deterministic policies mapping transformed states to actions.

Two families: a one-hidden-layer tanh network and a GP-mean policy whose
pseudo-observations are themselves the parameters.  Both squash their output
into the task's action box, so any parameter vector yields admissible
controls.  A uniform random policy covers bootstrap episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .errors import NumericalError

GP_POLICY_NOISE = 0.01  # fixed pseudo-observation noise, not optimized


def squash(v):
    """Smooth odd map onto [-1, 1]: (9 sin v + sin 3v) / 8."""
    return (9.0 * np.sin(v) + np.sin(3.0 * v)) / 8.0


@dataclass(frozen=True, eq=False)
class PolicySetup:
    """Dimensions and bounds a policy family needs to decode a parameter vector."""

    kind: str                      # "nn" | "gp"
    input_dim: int
    action_dim: int
    u_max: np.ndarray
    hidden: int = 10
    pseudo_points: int = 10
    input_bounds: np.ndarray | None = None  # (input_dim, 2), pseudo-input init box

    def __post_init__(self):
        object.__setattr__(self, "u_max", np.asarray(self.u_max, dtype=float).ravel())
        if self.u_max.size != self.action_dim or np.any(self.u_max <= 0):
            raise ValueError("u_max must hold one positive bound per action dimension")


@dataclass(eq=False)
class NnPolicyParams:
    """Weights of the one-hidden-layer tanh controller."""

    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    u_max: np.ndarray

    @staticmethod
    def n_params(input_dim: int, hidden: int, action_dim: int) -> int:
        return hidden * (input_dim + 1) + action_dim * (hidden + 1)

    @staticmethod
    def from_flat(theta: np.ndarray, setup: PolicySetup) -> "NnPolicyParams":
        """Unpack [W0 rows..., b0, W1 rows..., b1] from one flat vector."""
        d, h, f = setup.input_dim, setup.hidden, setup.action_dim
        theta = np.asarray(theta, dtype=float).ravel()
        expected = NnPolicyParams.n_params(d, h, f)
        if theta.size != expected:
            raise ValueError(f"theta has {theta.size} entries, expected {expected}")
        i = 0
        W0 = theta[i : i + h * d].reshape(h, d); i += h * d
        b0 = theta[i : i + h]; i += h
        W1 = theta[i : i + f * h].reshape(f, h); i += f * h
        b1 = theta[i : i + f]
        return NnPolicyParams(W0, b0, W1, b1, setup.u_max)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return nn_policy_eval(self, x)


def nn_policy_eval(params: NnPolicyParams, x) -> np.ndarray:
    """u = u_max * tanh(W1 tanh(W0 x + b0) + b1); always inside the action box."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != params.W0.shape[1]:
        raise ValueError(f"input has {x.size} entries, expected {params.W0.shape[1]}")
    hidden = np.tanh(params.W0 @ x + params.b0)
    return params.u_max * np.tanh(params.W1 @ hidden + params.b1)


@dataclass(eq=False)
class GpPolicyParams:
    """Pseudo-observations and kernel scales of the GP-mean controller.

    The weight matrix (K + noise I)^-1 targets is solved once at decode time
    and reused for every query of the rollout.
    """

    pseudo_inputs: np.ndarray    # (m, input_dim)
    pseudo_targets: np.ndarray   # (m, action_dim)
    length_scales: np.ndarray    # (input_dim,)
    signal_variance: float
    u_max: np.ndarray
    noise_variance: float = GP_POLICY_NOISE
    weights: np.ndarray = field(default=None, repr=False)

    @staticmethod
    def n_params(input_dim: int, m: int, action_dim: int) -> int:
        return m * input_dim + m * action_dim + input_dim + 1

    @staticmethod
    def from_flat(theta: np.ndarray, setup: PolicySetup) -> "GpPolicyParams":
        """Unpack pseudo-inputs, targets, then log length scales and log signal
        variance (exponentiated to stay positive)."""
        d, m, f = setup.input_dim, setup.pseudo_points, setup.action_dim
        theta = np.asarray(theta, dtype=float).ravel()
        expected = GpPolicyParams.n_params(d, m, f)
        if theta.size != expected:
            raise ValueError(f"theta has {theta.size} entries, expected {expected}")
        i = 0
        inputs = theta[i : i + m * d].reshape(m, d); i += m * d
        targets = theta[i : i + m * f].reshape(m, f); i += m * f
        log_ls = np.clip(theta[i : i + d], -20.0, 20.0); i += d
        log_sv = float(np.clip(theta[i], -20.0, 20.0))
        params = GpPolicyParams(
            pseudo_inputs=inputs,
            pseudo_targets=targets,
            length_scales=np.exp(log_ls),
            signal_variance=math.exp(log_sv),
            u_max=setup.u_max,
        )
        params._solve()
        return params

    def _solve(self):
        S = self.pseudo_inputs / self.length_scales
        sq = np.einsum("md,md->m", S, S)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (S @ S.T)
        np.maximum(d2, 0.0, out=d2)
        np.fill_diagonal(d2, 0.0)
        K = self.signal_variance * np.exp(-0.5 * d2)
        K[np.diag_indices_from(K)] += self.noise_variance
        try:
            L = cholesky(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"pseudo-observation kernel not factorizable: {exc}") from exc
        self.weights = cho_solve((L, True), self.pseudo_targets)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return gp_policy_eval(self, x)


def gp_policy_eval(params: GpPolicyParams, x) -> np.ndarray:
    """u = u_max * squash(posterior mean over the pseudo-observations)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != params.pseudo_inputs.shape[1]:
        raise ValueError(
            f"input has {x.size} entries, expected {params.pseudo_inputs.shape[1]}"
        )
    if params.weights is None:
        params._solve()
    z = (params.pseudo_inputs - x) / params.length_scales
    kvec = params.signal_variance * np.exp(-0.5 * np.einsum("md,md->m", z, z))
    return params.u_max * squash(kvec @ params.weights)


def random_policy_eval(bounds, rng: np.random.Generator) -> np.ndarray:
    """Uniform action in [-u_max, u_max] per dimension."""
    bounds = np.asarray(bounds, dtype=float).ravel()
    return rng.uniform(-bounds, bounds)


def param_space(setup: PolicySetup) -> tuple[int, np.ndarray]:
    """Parameter count and the optimizer's initialization box for a policy family."""
    if setup.kind == "nn":
        n = NnPolicyParams.n_params(setup.input_dim, setup.hidden, setup.action_dim)
        box = np.tile([-1.0, 1.0], (n, 1))
        return n, box
    if setup.kind == "gp":
        d, m, f = setup.input_dim, setup.pseudo_points, setup.action_dim
        n = GpPolicyParams.n_params(d, m, f)
        if setup.input_bounds is None:
            input_box = np.tile([-1.0, 1.0], (d, 1))
        else:
            input_box = np.asarray(setup.input_bounds, dtype=float).reshape(d, 2)
        rows = [input_box] * m
        rows.append(np.tile([-1.0, 1.0], (m * f, 1)))
        rows.append(np.tile([math.log(0.1), math.log(2.0)], (d, 1)))
        rows.append(np.array([[math.log(0.5), math.log(2.0)]]))
        return n, np.vstack(rows)
    raise ValueError(f"unknown policy kind: {setup.kind!r}")


def decode(setup: PolicySetup, theta: np.ndarray):
    """Turn a flat parameter vector into a callable state -> action policy."""
    if setup.kind == "nn":
        return NnPolicyParams.from_flat(theta, setup)
    if setup.kind == "gp":
        return GpPolicyParams.from_flat(theta, setup)
    raise ValueError(f"unknown policy kind: {setup.kind!r}")
