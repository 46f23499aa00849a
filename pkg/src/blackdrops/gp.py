"""Exact single-output Gaussian process regression with an ARD squared-exponential kernel.

A fitted model is immutable: it caches the Cholesky factor of the (noisy,
possibly jittered) kernel matrix, the weight vector ``alpha = K^-1 y`` and the
dense inverse ``K^-1`` so that repeated predictions cost O(n^2) each without
re-factorizing.  Hyperparameters are fitted by maximizing the log marginal
likelihood with a multi-start CMA-ES search over log-parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky

from .errors import NumericalError

# Jitter escalation for near-singular kernel matrices: start at
# JITTER_INIT * signal_variance, multiply by JITTER_GROWTH per failure,
# give up past JITTER_CAP * signal_variance.
JITTER_INIT = 1e-10
JITTER_GROWTH = 10.0
JITTER_CAP = 1e-4

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ArdKernelParams:
    """Hyperparameters of the ARD squared-exponential kernel.

    ``length_scales`` has one strictly positive entry per input dimension,
    ``signal_variance`` is the prior variance of the latent function and
    ``noise_variance`` the observation noise added on the diagonal.
    """

    length_scales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("length_scales must be a non-empty 1-D vector")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0.0):
            raise ValueError("length_scales must be finite and strictly positive")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0.0):
            raise ValueError("signal_variance must be finite and > 0")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0.0):
            raise ValueError("noise_variance must be finite and >= 0")

    @property
    def input_dim(self) -> int:
        return self.length_scales.size

    def to_log_vector(self) -> np.ndarray:
        """Pack as [log length_scales..., log signal_var, log noise_var]."""
        return np.concatenate(
            [
                np.log(self.length_scales),
                [np.log(self.signal_variance)],
                [np.log(max(self.noise_variance, 1e-300))],
            ]
        )

    @staticmethod
    def from_log_vector(v: np.ndarray) -> "ArdKernelParams":
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("log-parameter vector needs >= 3 entries")
        v = np.clip(v, -60.0, 60.0)
        return ArdKernelParams(
            length_scales=np.exp(v[:-2]),
            signal_variance=float(np.exp(v[-2])),
            noise_variance=float(np.exp(v[-1])),
        )


def kernel_eval(p, q, params: ArdKernelParams, same_index: bool = False) -> float:
    """Scalar ARD kernel: sv * exp(-0.5 * sum((p-q)^2 / ls^2)), plus noise if same_index."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    d = params.input_dim
    if p.size != d or q.size != d:
        raise ValueError(
            f"kernel input dimension mismatch: got {p.size} and {q.size}, expected {d}"
        )
    z = (p - q) / params.length_scales
    val = params.signal_variance * math.exp(-0.5 * float(z @ z))
    if same_index:
        val += params.noise_variance
    return val


def kernel_matrix(X: np.ndarray, params: ArdKernelParams, include_noise: bool = True) -> np.ndarray:
    """Full kernel matrix over the rows of X (O(n^2 d), no n^2 d temporaries)."""
    S = X / params.length_scales
    sq = np.einsum("nd,nd->n", S, S)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (S @ S.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    K = params.signal_variance * np.exp(-0.5 * d2)
    if include_noise and params.noise_variance > 0.0:
        K[np.diag_indices_from(K)] += params.noise_variance
    return K


def cross_kernel(Q: np.ndarray, X: np.ndarray, params: ArdKernelParams) -> np.ndarray:
    """Kernel block k(q_i, x_j) for query rows Q against training rows X."""
    SQ = Q / params.length_scales
    SX = X / params.length_scales
    d2 = (
        np.einsum("md,md->m", SQ, SQ)[:, None]
        + np.einsum("nd,nd->n", SX, SX)[None, :]
        - 2.0 * (SQ @ SX.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return params.signal_variance * np.exp(-0.5 * d2)


def _factorize_with_jitter(K: np.ndarray, signal_variance: float):
    """Lower Cholesky factor of K, escalating diagonal jitter on failure.

    Returns (L, jitter_used).  Raises NumericalError once the jitter cap is
    exceeded, carrying condition diagnostics.
    """
    jitter = 0.0
    while True:
        try:
            L = cholesky(K if jitter == 0.0 else K + jitter * np.eye(K.shape[0]), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        except ValueError:  # NaN/inf entries
            break
        jitter = JITTER_INIT * signal_variance if jitter == 0.0 else jitter * JITTER_GROWTH
        if jitter > JITTER_CAP * signal_variance:
            break
    try:
        cond = float(np.linalg.cond(K))
    except Exception:
        cond = float("nan")
    raise NumericalError(
        f"kernel matrix factorization failed (n={K.shape[0]}, cond~{cond:.3e}, "
        f"jitter cap {JITTER_CAP * signal_variance:.3e} reached)"
    )


@dataclass(frozen=True, eq=False)
class GpModel:
    """Trained GP: data, hyperparameters and cached solves of the kernel system."""

    inputs: np.ndarray        # (n, d)
    targets: np.ndarray       # (n,)
    kernel: ArdKernelParams
    chol_factor: np.ndarray   # lower-triangular L with L L^T = K + jitter*I
    alpha: np.ndarray         # (K + jitter*I)^-1 targets
    k_inv: np.ndarray         # dense (K + jitter*I)^-1, reused by every prediction
    jitter: float
    inv_sq_ls: np.ndarray = None  # 1 / length_scales^2, cached for prediction

    def __post_init__(self):
        if self.inv_sq_ls is None:
            object.__setattr__(
                self, "inv_sq_ls", 1.0 / (self.kernel.length_scales * self.kernel.length_scales)
            )

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def gp_fit(inputs: np.ndarray, targets: np.ndarray, params: ArdKernelParams) -> GpModel:
    """Fit the exact GP: factorize the kernel matrix and cache its solves."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("gp_fit needs at least one training point")
    if X.shape[0] != y.size:
        raise ValueError(f"inputs ({X.shape[0]} rows) and targets ({y.size}) disagree")
    if X.shape[1] != params.input_dim:
        raise ValueError(
            f"input dimension {X.shape[1]} does not match kernel ({params.input_dim})"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")

    K = kernel_matrix(X, params, include_noise=True)
    L, jitter = _factorize_with_jitter(K, params.signal_variance)
    alpha = cho_solve((L, True), y)
    k_inv = cho_solve((L, True), np.eye(X.shape[0]))
    return GpModel(
        inputs=X,
        targets=y,
        kernel=params,
        chol_factor=L,
        alpha=alpha,
        k_inv=k_inv,
        jitter=jitter,
    )


def _check_query(model: GpModel, query) -> np.ndarray:
    q = np.asarray(query, dtype=float).ravel()
    if q.size != model.input_dim:
        raise ValueError(
            f"query dimension {q.size} does not match model ({model.input_dim})"
        )
    return q


def query_sq_diffs(inputs: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(X - q)^2 rows; shared across models trained on the same inputs."""
    diff = inputs - q
    return diff * diff


def predict_from_sq_diffs(model: GpModel, dsq: np.ndarray) -> tuple[float, float]:
    """Posterior at the point whose squared input differences are `dsq`."""
    kvec = model.kernel.signal_variance * np.exp(-0.5 * (dsq @ model.inv_sq_ls))
    mean = float(kvec @ model.alpha)
    var = model.kernel.signal_variance - float(kvec @ (model.k_inv @ kvec))
    return mean, max(var, 0.0)


def gp_predict(model: GpModel, query) -> tuple[float, float]:
    """Posterior mean and (non-negative) latent variance at a single query point."""
    q = _check_query(model, query)
    return predict_from_sq_diffs(model, query_sq_diffs(model.inputs, q))


def gp_predict_batch(model: GpModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior for many queries, reusing the cached factorization."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if Q.shape[1] != model.input_dim:
        raise ValueError(
            f"query dimension {Q.shape[1]} does not match model ({model.input_dim})"
        )
    KV = cross_kernel(Q, model.inputs, model.kernel)
    means = KV @ model.alpha
    variances = model.kernel.signal_variance - np.einsum("mn,mn->m", KV, KV @ model.k_inv)
    return means, np.maximum(variances, 0.0)


def gp_sample(model: GpModel, query, rng: np.random.Generator) -> float:
    """One draw from the posterior at `query`: mean + sqrt(var) * z."""
    mean, var = gp_predict(model, query)
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * float(rng.standard_normal())


def log_marginal_likelihood(inputs: np.ndarray, targets: np.ndarray, params: ArdKernelParams) -> float:
    """Log evidence of the data under the GP prior (zero mean)."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("log_marginal_likelihood needs at least one point")
    K = kernel_matrix(X, params, include_noise=True)
    L, _ = _factorize_with_jitter(K, params.signal_variance)
    alpha = cho_solve((L, True), y)
    n = y.size
    return float(-0.5 * (y @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI)


@dataclass(frozen=True, eq=False)
class _LmlObjective:
    """Picklable maximization target over log-hyperparameters."""

    inputs: np.ndarray
    targets: np.ndarray

    def __call__(self, log_params: np.ndarray, rng=None) -> float:
        try:
            params = ArdKernelParams.from_log_vector(log_params)
            val = log_marginal_likelihood(self.inputs, self.targets, params)
        except (NumericalError, FloatingPointError, ValueError):
            return -1e25
        if not math.isfinite(val):
            return -1e25
        return val


def _heuristic_start(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Data-spread initialization: median pairwise distance per dimension,
    target variance for the signal, a small fraction of it for the noise."""
    n, d = X.shape
    sub = X if n <= 200 else X[:: max(1, n // 200)]
    ls = np.empty(d)
    for j in range(d):
        col = sub[:, j]
        dist = np.abs(col[:, None] - col[None, :])
        med = float(np.median(dist[np.triu_indices_from(dist, k=1)])) if sub.shape[0] > 1 else 0.0
        ls[j] = med if med > 0.0 else max(float(np.ptp(col)), 1.0)
    sv = max(float(np.var(y)), 1e-10)
    nv = max(0.01 * sv, 1e-12)
    return ArdKernelParams(ls, sv, nv).to_log_vector()


def fit_hyperparams(
    inputs: np.ndarray,
    targets: np.ndarray,
    budget: int = 2000,
    rng: np.random.Generator | int | None = None,
    n_starts: int = 4,
) -> ArdKernelParams:
    """Maximum-likelihood hyperparameters via multi-start CMA-ES in log-space.

    The returned parameters score at least as well as every initial start;
    with budget 0 the best start itself is returned.
    """
    from . import optimizer  # deferred: optimizer does not depend on gp

    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("fit_hyperparams needs at least two training points")
    if isinstance(rng, np.random.Generator):
        gen = rng
    else:
        gen = np.random.default_rng(rng)

    objective = _LmlObjective(X, y)
    base = _heuristic_start(X, y)
    starts = [base]
    for _ in range(n_starts - 1):
        starts.append(base + gen.normal(0.0, 0.7, size=base.size))

    candidates = [(objective(s), s) for s in starts]
    dim = base.size
    per_start = budget // max(1, len(starts))
    if per_start >= optimizer.default_population(dim):
        box = np.stack([base - 3.0, base + 3.0], axis=1)
        for i, s in enumerate(starts):
            result = optimizer.maximize(
                objective,
                dim,
                init_box=box,
                budget=per_start,
                seed=int(gen.integers(2**31 - 1)),
                init_mean=s,
                sigma0=0.5,
                uncertainty=None,
                elite_reevals=0,
                workers=1,
            )
            candidates.append((result.best_score, result.best_theta))

    best_score, best_vec = max(candidates, key=lambda c: c[0])
    if best_score <= -1e24:
        # every evaluation failed; fall back to the heuristic
        return ArdKernelParams.from_log_vector(base)
    return ArdKernelParams.from_log_vector(best_vec)
