import math

import numpy as np
import pytest

from conftest import central_difference, dense_gp_posterior
from gpcd.errors import IllConditionedKernelError
from gpcd.gp import (
    ExactGPRegressor,
    OptimizerConfig,
    negative_mll,
    optimize_hyperparameters,
    stable_cholesky,
    subset_downsample,
)
from gpcd.kernels import GatedKernel, RBFKernel, SumKernel, VelocityGate

from test_kernels import random_kernel


class TestFit:
    def test_single_point_weight_vector(self):
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[1.0]),
                              noise_variance=1.0)
        gp.fit(np.zeros((1, 1)), np.array([2.0]))
        np.testing.assert_allclose(gp.alpha_, [1.0])

    def test_factor_reconstructs_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        kernel = RBFKernel(variance=2.0, length_scales=np.full(3, 1.5))
        gp = ExactGPRegressor(kernel, noise_variance=0.1).fit(x, y)
        ky = kernel(x) + 0.1 * np.eye(30)
        rel = np.abs(gp.L_ @ gp.L_.T - ky).max() / np.abs(ky).max()
        assert rel <= 1e-8
        residual = ky @ gp.alpha_ - y
        assert np.abs(residual).max() <= 1e-8

    def test_interpolates_training_targets(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-2, 2, size=(40, 2))
        y = np.sin(x[:, 0]) + 0.5 * np.cos(x[:, 1])
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[1.0, 1.0]),
                              noise_variance=1e-8).fit(x, y)
        pred = gp.predict(x)
        assert np.abs(pred - y).max() <= 1e-4

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        x_test = rng.normal(size=(10, 2))
        kernel = RBFKernel(variance=1.3, length_scales=[0.9, 1.1])
        gp = ExactGPRegressor(kernel, noise_variance=0.05).fit(x, y)
        mean, std = gp.predict(x_test, return_std=True)
        mean_ref, var_ref = dense_gp_posterior(kernel, x, y, 0.05, x_test)
        np.testing.assert_allclose(mean, mean_ref, atol=1e-8)
        np.testing.assert_allclose(std**2, var_ref, atol=1e-8)

    def test_jitter_escalation_recorded(self):
        # Identical points make the Gram matrix exactly rank one; the noise
        # is below machine precision so only the jitter escalation rescues
        # the factorization, and the amount used is recorded.
        x = np.zeros((40, 1))
        y = np.zeros(40)
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[1.0]),
                              noise_variance=1e-300).fit(x, y)
        assert gp.jitter_ > 0


class TestPredict:
    def test_prior_reversion_far_away(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(25, 2))
        y = rng.normal(size=25)
        kernel = RBFKernel(variance=2.0, length_scales=[0.5, 0.5])
        gp = ExactGPRegressor(kernel, noise_variance=0.1).fit(x, y)
        far = np.full((3, 2), 50.0)
        mean, std = gp.predict(far, return_std=True)
        np.testing.assert_allclose(mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(std**2, 2.0, atol=1e-6)

    def test_variance_clamped_and_counted(self):
        rng = np.random.default_rng(4)
        x = np.vstack([np.zeros((15, 1)), 1e-9 * rng.normal(size=(15, 1))])
        y = rng.normal(size=30)
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[1.0]),
                              noise_variance=1e-10).fit(x, y)
        _, std = gp.predict(x, return_std=True)
        assert np.all(std >= 0)
        assert gp.clamped_variance_count_ >= 0

    def test_dimension_mismatch(self):
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[1.0]),
                              noise_variance=0.1)
        gp.fit(np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(ValueError):
            gp.predict(np.zeros((2, 4)))

    def test_residual_variance_bounded_by_noise(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-3, 3, size=(60, 1))
        f = np.sin(1.3 * x[:, 0])
        noise = 0.05
        y = f + rng.normal(0, math.sqrt(noise), 60)
        gp = ExactGPRegressor(RBFKernel(variance=1.0, length_scales=[0.7]),
                              noise_variance=noise).fit(x, y)
        residuals = gp.predict(x) - y
        assert residuals.var() <= noise * 1.5


class TestNegativeMLL:
    def test_closed_form_single_point(self):
        kernel = RBFKernel(variance=1.0, length_scales=[1.0])
        value = negative_mll(kernel, np.zeros((1, 1)), np.zeros(1), 1.0)
        assert value == pytest.approx(0.5 * math.log(2.0)
                                      + 0.5 * math.log(2.0 * math.pi))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(20, 6))
        y = rng.normal(size=20)
        kernel = random_kernel(rng)
        theta0 = np.append(kernel.theta, math.log(0.3))

        def value_at(theta):
            work = kernel.clone_with_theta(theta[:-1])
            return negative_mll(work, x, y, math.exp(theta[-1]))

        _, grad = negative_mll(kernel, x, y, 0.3, eval_gradient=True)
        fd = central_difference(value_at, theta0)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-7)
        assert rel.max() < 1e-4

    def test_duplicated_dataset_keeps_variance_argmin(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-2, 2, size=(40, 1))
        kernel_true = RBFKernel(variance=2.0, length_scales=[0.6])
        k = kernel_true(x) + 1e-10 * np.eye(40)
        y = np.linalg.cholesky(k) @ rng.normal(size=40)
        x2 = np.vstack([x, x])
        y2 = np.concatenate([y, y])
        grid = np.linspace(math.log(0.2), math.log(20.0), 41)

        def argmin_scan(xs, ys):
            losses = []
            for log_var in grid:
                work = RBFKernel(variance=math.exp(log_var),
                                 length_scales=[0.6])
                losses.append(negative_mll(work, xs, ys, 0.01))
            return grid[int(np.argmin(losses))]

        assert abs(argmin_scan(x, y) - argmin_scan(x2, y2)) <= 0.25


class TestOptimize:
    def test_descent_on_synthetic_sinusoid(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-3, 3, size=(200, 1))
        y = np.sin(2.0 * x[:, 0]) + rng.normal(0, 0.1, 200)
        kernel = RBFKernel(variance=5.0, length_scales=[3.0])
        config = OptimizerConfig(iterations=60, batch_size=200, seed=0,
                                 eval_interval=5)
        result = optimize_hyperparameters(kernel, x, y, 0.5, config)
        assert result.best_loss <= result.initial_loss

    def test_recovers_known_variance(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-3, 3, size=(500, 1))
        kernel_true = RBFKernel(variance=2.0, length_scales=[0.5])
        k = kernel_true(x) + 1e-10 * np.eye(500)
        y = np.linalg.cholesky(k) @ rng.normal(size=500) \
            + rng.normal(0, 0.1, 500)
        kernel0 = RBFKernel(variance=float(np.var(y)), length_scales=[1.0])
        config = OptimizerConfig(iterations=300, batch_size=256, seed=1,
                                 learning_rate=0.05)
        result = optimize_hyperparameters(kernel0, x, y, 0.01 * float(np.var(y)),
                                          config)
        recovered = result.kernel.variance
        assert 1.0 <= recovered <= 4.0

    def test_same_seed_identical_trace(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(100, 2))
        y = rng.normal(size=100)
        config = OptimizerConfig(iterations=40, batch_size=32, seed=5)

        def run():
            kernel = RBFKernel(variance=1.0, length_scales=[1.0, 1.0])
            return optimize_hyperparameters(kernel, x, y, 0.1, config)

        a, b = run(), run()
        assert a.trace == b.trace
        np.testing.assert_array_equal(a.kernel.theta, b.kernel.theta)

    @pytest.mark.filterwarnings("ignore:invalid value encountered",
                                "ignore:overflow encountered")
    def test_nonfinite_loss_retries_at_half_rate(self):
        # An absurd learning rate drives the log-variance past the overflow
        # point; the halved retry stays finite and is flagged.
        rng = np.random.default_rng(12)
        x = rng.normal(size=(30, 1))
        y = rng.normal(size=30)
        kernel = RBFKernel(variance=1.0, length_scales=[1.0])
        config = OptimizerConfig(learning_rate=100.0, iterations=10,
                                 batch_size=30, seed=0, eval_interval=1,
                                 patience=100)
        result = optimize_hyperparameters(kernel, x, y, 0.1, config)
        assert result.restarted
        assert np.all(np.isfinite(result.kernel.theta))

    def test_nonfinite_loss_fails_after_retry(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(30, 1))
        y = rng.normal(size=30)
        kernel = RBFKernel(variance=1.0, length_scales=[1.0])
        config = OptimizerConfig(learning_rate=400.0, iterations=30,
                                 batch_size=30, seed=0, eval_interval=1,
                                 patience=100)
        with pytest.raises(RuntimeError):
            optimize_hyperparameters(kernel, x, y, 0.1, config)

    def test_gated_kernel_optimizable(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(80, 4))
        x[:40, 1] = 0.0  # half the samples sit in the gate band
        y = rng.normal(size=80)
        gate = VelocityGate(index=1, threshold=0.5)
        kernel = SumKernel([
            GatedKernel(RBFKernel(variance=1.0, length_scales=np.ones(4)), gate),
            RBFKernel(variance=1.0, length_scales=np.ones(2),
                      active_dims=[0, 1]),
        ])
        config = OptimizerConfig(iterations=30, batch_size=40, seed=2)
        result = optimize_hyperparameters(kernel, x, y, 0.1, config)
        assert np.all(np.isfinite(result.kernel.theta))


class TestSubsetDownsample:
    def test_identity_when_target_is_size(self):
        mask = np.zeros(17, dtype=bool)
        np.testing.assert_array_equal(subset_downsample(mask, 17, seed=0),
                                      np.arange(17))

    def test_exact_count_unique(self):
        rng = np.random.default_rng(12)
        mask = rng.random(80_000) < 0.3
        idx = subset_downsample(mask, 5000, seed=3)
        assert idx.size == 5000
        assert np.unique(idx).size == 5000

    def test_stratification_within_one_percent(self):
        rng = np.random.default_rng(13)
        mask = rng.random(50_000) < 0.37
        idx = subset_downsample(mask, 5000, seed=4)
        retained = mask[idx].mean()
        assert abs(retained - mask.mean()) <= 0.01

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            subset_downsample(np.zeros(0, dtype=bool), 1, seed=0)

    def test_deterministic(self):
        mask = np.arange(1000) % 3 == 0
        a = subset_downsample(mask, 100, seed=9)
        b = subset_downsample(mask, 100, seed=9)
        np.testing.assert_array_equal(a, b)


class TestStableCholesky:
    def test_clean_matrix_no_jitter(self):
        a = np.diag([2.0, 3.0])
        low, jitter = stable_cholesky(a)
        assert jitter == 0.0
        np.testing.assert_allclose(low @ low.T, a)

    def test_indefinite_matrix_rejected(self):
        # A negative eigenvalue comparable to the trace cannot be fixed by
        # the bounded jitter escalation.
        with pytest.raises(IllConditionedKernelError):
            stable_cholesky(np.diag([1.0, -1.0]))
