"""Exact Gaussian-process regression and hyperparameter optimization.

Inference follows the standard Cholesky route: with ``Ky = K + noise * I``,
the weight vector is ``alpha = Ky^-1 (y - m)`` and the negative marginal log
likelihood is ``0.5 y^T alpha + sum(log diag L) + N/2 log 2pi``. Gradients
w.r.t. the log hyperparameters use the trace identity with
``Q = Ky^-1 - alpha alpha^T``. Hyperparameters are tuned by minibatch ADAM on
the negative marginal log likelihood, where every minibatch is treated as an
independent exact-GP likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import IllConditionedKernelError
from .kernels import Kernel

_LOG_2PI = math.log(2.0 * math.pi)


def stable_cholesky(matrix: np.ndarray):
    """Lower Cholesky factor with adaptive jitter escalation.

    Starts from a jitter of 1e-10 times the mean diagonal and escalates by
    factors of 10 while the total stays at most 1e-4 times the trace.
    Returns ``(L, jitter)``; raises :class:`IllConditionedKernelError` when
    even the maximum jitter does not produce a factorization.
    """
    try:
        return np.linalg.cholesky(matrix), 0.0
    except np.linalg.LinAlgError:
        pass
    trace = float(np.trace(matrix))
    scale = max(trace / matrix.shape[0], np.finfo(float).tiny)
    jitter = 1e-10 * scale
    limit = 1e-4 * max(trace, scale)
    eye = np.eye(matrix.shape[0])
    while jitter <= limit:
        try:
            return np.linalg.cholesky(matrix + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedKernelError(
        f"factorization failed up to jitter {limit:.3e}"
    )


def negative_mll(kernel: Kernel, x, y, noise_variance, eval_gradient=False):
    """Negative marginal log likelihood of mean-subtracted targets.

    With ``eval_gradient=True`` also returns the gradient w.r.t. the vector
    ``[kernel.theta..., log(noise_variance)]``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if eval_gradient:
        k, k_grad = kernel(x, eval_gradient=True)
    else:
        k = kernel(x)
    ky = k + noise_variance * np.eye(n)
    low, _ = stable_cholesky(ky)
    alpha = cho_solve((low, True), y)
    value = (0.5 * float(y @ alpha) + float(np.sum(np.log(np.diag(low))))
             + 0.5 * n * _LOG_2PI)
    if not eval_gradient:
        return value
    ky_inv = cho_solve((low, True), np.eye(n))
    quad = ky_inv - np.outer(alpha, alpha)
    grad = np.empty(kernel.n_theta + 1)
    for j in range(kernel.n_theta):
        grad[j] = 0.5 * float(np.sum(quad * k_grad[..., j]))
    grad[-1] = 0.5 * noise_variance * float(np.trace(quad))
    return value, grad


@dataclass(frozen=True)
class OptimizerConfig:
    """ADAM settings for negative marginal log likelihood minimization."""

    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    iterations: int = 200
    batch_size: int = 256
    tolerance: float = 1e-3
    patience: int = 10
    eval_interval: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")


@dataclass
class OptimizationResult:
    """Outcome of one hyperparameter optimization run."""

    kernel: Kernel
    noise_variance: float
    trace: list = field(default_factory=list)
    best_loss: float = math.nan
    initial_loss: float = math.nan
    restarted: bool = False


class _NonFiniteLoss(Exception):
    pass


def _adam_run(kernel, x, y, noise_variance, config, learning_rate):
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    batch = min(config.batch_size, n)
    work = kernel.clone_with_theta(kernel.theta)
    theta = np.append(work.theta, math.log(noise_variance))

    def objective(th, idx, want_grad=True):
        # Log-hyperparameters beyond +-700 overflow/underflow exp(); treat a
        # run that diverged that far as a non-finite loss.
        if not np.all(np.isfinite(th)) or np.any(np.abs(th) > 700.0):
            raise _NonFiniteLoss
        work.theta = th[:-1]
        try:
            return negative_mll(work, x[idx], y[idx], math.exp(th[-1]),
                                eval_gradient=want_grad)
        except IllConditionedKernelError:
            raise _NonFiniteLoss from None

    # Scoring batch is fixed across iterations so "best seen" is comparable.
    eval_idx = np.sort(rng.choice(n, size=min(2 * batch, n), replace=False))
    initial = objective(theta, eval_idx, want_grad=False)
    if not np.isfinite(initial):
        raise _NonFiniteLoss
    best_loss, best_theta = initial, theta.copy()
    trace = [(0, float(initial), float(initial))]
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    stall = 0
    for it in range(1, config.iterations + 1):
        idx = rng.choice(n, size=batch, replace=False)
        loss, grad = objective(theta, idx)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise _NonFiniteLoss
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad**2
        m_hat = m / (1.0 - config.beta1**it)
        v_hat = v / (1.0 - config.beta2**it)
        theta = theta - learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        if it % config.eval_interval == 0 or it == config.iterations:
            score = objective(theta, eval_idx, want_grad=False)
            if not np.isfinite(score):
                raise _NonFiniteLoss
            trace.append((it, float(loss), float(score)))
            if score < best_loss - config.tolerance:
                best_loss, best_theta = score, theta.copy()
                stall = 0
            else:
                if score < best_loss:
                    best_loss, best_theta = score, theta.copy()
                stall += 1
                if stall >= config.patience:
                    break
        else:
            trace.append((it, float(loss), math.nan))
    tuned = kernel.clone_with_theta(best_theta[:-1])
    return OptimizationResult(
        kernel=tuned,
        noise_variance=float(math.exp(best_theta[-1])),
        trace=trace,
        best_loss=float(best_loss),
        initial_loss=float(initial),
    )


def optimize_hyperparameters(kernel: Kernel, x, y, noise_variance,
                             config: OptimizerConfig | None = None
                             ) -> OptimizationResult:
    """Minibatch ADAM minimization of the negative marginal log likelihood.

    Deterministic for a given config seed; minibatches are resampled every
    iteration and the returned hyperparameters are the best seen on a fixed
    scoring batch, not the last iterate. A non-finite loss triggers one
    retry at half the learning rate before failing.
    """
    config = config or OptimizerConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    try:
        return _adam_run(kernel, x, y, noise_variance, config,
                         config.learning_rate)
    except _NonFiniteLoss:
        try:
            result = _adam_run(kernel, x, y, noise_variance, config,
                               0.5 * config.learning_rate)
        except _NonFiniteLoss:
            raise RuntimeError(
                "negative marginal log likelihood became non-finite even "
                "after halving the learning rate"
            ) from None
        result.restarted = True
        return result


def subset_downsample(static_mask, target: int, seed=0) -> np.ndarray:
    """Stratified uniform downsampling indices, balanced over gate classes.

    Quasi-static and dynamical samples are retained proportionally (to the
    nearest count); the result is a sorted array of exactly ``target`` unique
    indices, deterministic per seed.
    """
    mask = np.asarray(static_mask, dtype=bool).ravel()
    n = mask.size
    if n == 0:
        raise ValueError("cannot downsample an empty dataset")
    target = int(target)
    if not 1 <= target <= n:
        raise ValueError(f"target must be in [1, {n}], got {target}")
    if target == n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    static_idx = np.flatnonzero(mask)
    dynamic_idx = np.flatnonzero(~mask)
    n_static = int(round(target * static_idx.size / n))
    n_static = min(max(n_static, target - dynamic_idx.size), static_idx.size)
    n_dynamic = target - n_static
    picks = [rng.choice(static_idx, size=n_static, replace=False)
             if n_static else np.empty(0, dtype=int),
             rng.choice(dynamic_idx, size=n_dynamic, replace=False)
             if n_dynamic else np.empty(0, dtype=int)]
    return np.sort(np.concatenate(picks).astype(int))


class ExactGPRegressor(BaseEstimator, RegressorMixin):
    """Exact GP regression with a fixed kernel and noise variance.

    Targets are assumed mean-subtracted by the caller (the semi-parametric
    models own their physics mean). After ``fit`` the model retains the
    training inputs, the lower Cholesky factor of ``K + noise * I`` and the
    weight vector ``alpha``; prediction is ``K(X*, X) @ alpha`` with the
    latent variance ``diag(K(X*, X*)) - diag(V^T V)`` clamped at zero
    (clamps are counted in ``clamped_variance_count_``).
    """

    _PREDICT_BLOCK = 4096

    def __init__(self, kernel: Kernel, noise_variance: float = 1e-2):
        self.kernel = kernel
        self.noise_variance = noise_variance

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        k = self.kernel(X)
        ky = k + self.noise_variance * np.eye(len(X))
        low, jitter = stable_cholesky(ky)
        self.X_train_ = X
        self.y_train_ = y.astype(float)
        self.L_ = low
        self.jitter_ = jitter
        self.alpha_ = cho_solve((low, True), self.y_train_)
        self.log_marginal_likelihood_value_ = -(
            0.5 * float(self.y_train_ @ self.alpha_)
            + float(np.sum(np.log(np.diag(low))))
            + 0.5 * len(X) * _LOG_2PI
        )
        self.clamped_variance_count_ = 0
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        if X.shape[1] != self.X_train_.shape[1]:
            raise ValueError("prediction inputs do not match the training "
                             "dimension")
        mean = np.empty(X.shape[0])
        std = np.empty(X.shape[0]) if return_std else None
        for start in range(0, X.shape[0], self._PREDICT_BLOCK):
            stop = min(start + self._PREDICT_BLOCK, X.shape[0])
            block = X[start:stop]
            k_star = self.kernel(block, self.X_train_)
            mean[start:stop] = k_star @ self.alpha_
            if return_std:
                v = solve_triangular(self.L_, k_star.T, lower=True)
                var = self.kernel.diag(block) - np.sum(v**2, axis=0)
                negative = var < 0
                self.clamped_variance_count_ += int(np.count_nonzero(negative))
                std[start:stop] = np.sqrt(np.where(negative, 0.0, var))
        if return_std:
            return mean, std
        return mean
