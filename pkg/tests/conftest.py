"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
import sympy as sp
import threadpoolctl

# BLAS thread pools thrash on small kernel matrices; one thread is faster
# for every problem size this suite touches.
threadpoolctl.threadpool_limits(1, "blas")

from gpcd.dynamics import DynamicParams, FrictionParams, MotorParams, \
    PlanarTwoLinkArm
from gpcd.simulate import Plant


def default_dynamic_params() -> DynamicParams:
    return DynamicParams(
        masses=(2.0, 1.0),
        lengths=(0.5, 0.5),
        com_offsets=(0.25, 0.25),
        inertias=(2.0 * 0.25 / 12.0, 1.0 * 0.25 / 12.0),
        gravity=9.81,
    )


def default_motor_params() -> MotorParams:
    return MotorParams(rotor_inertia=1e-4, damping=1e-4, torque_constant=0.1,
                       gear_ratio=100.0)


@pytest.fixture(scope="session")
def arm() -> PlanarTwoLinkArm:
    return PlanarTwoLinkArm(default_dynamic_params(), default_motor_params())


@pytest.fixture(scope="session")
def plant() -> Plant:
    return Plant.default()


@pytest.fixture
def friction() -> FrictionParams:
    return FrictionParams(static=0.6, kinetic=0.4, viscous=0.3)


@pytest.fixture
def frictionless() -> FrictionParams:
    return FrictionParams(static=0.0, kinetic=0.0, viscous=0.0)


class LagrangianOracle:
    """Symbolic Euler-Lagrange dynamics of the planar two-link arm.

    Built from the kinetic and potential energy alone, independently of the
    closed-form matrices in the package.
    """

    def __init__(self, params: DynamicParams):
        q1, q2, v1, v2, a1, a2 = sp.symbols("q1 q2 v1 v2 a1 a2")
        m1, m2 = params.masses
        l1 = params.lengths[0]
        lc1, lc2 = params.com_offsets
        i1, i2 = params.inertias
        g = params.gravity

        x1 = lc1 * sp.cos(q1)
        y1 = lc1 * sp.sin(q1)
        x2 = l1 * sp.cos(q1) + lc2 * sp.cos(q1 + q2)
        y2 = l1 * sp.sin(q1) + lc2 * sp.sin(q1 + q2)
        vx1 = sp.diff(x1, q1) * v1
        vy1 = sp.diff(y1, q1) * v1
        vx2 = sp.diff(x2, q1) * v1 + sp.diff(x2, q2) * v2
        vy2 = sp.diff(y2, q1) * v1 + sp.diff(y2, q2) * v2
        kinetic = (
            sp.Rational(1, 2) * m1 * (vx1**2 + vy1**2)
            + sp.Rational(1, 2) * i1 * v1**2
            + sp.Rational(1, 2) * m2 * (vx2**2 + vy2**2)
            + sp.Rational(1, 2) * i2 * (v1 + v2) ** 2
        )
        potential = m1 * g * y1 + m2 * g * y2

        coords = [(q1, v1, a1), (q2, v2, a2)]
        torques = []
        for qi, vi, _ in coords:
            dT_dv = sp.diff(kinetic, vi)
            # d/dt of dT/dv along the trajectory
            total = sum(
                sp.diff(dT_dv, qj) * vj + sp.diff(dT_dv, vj) * aj
                for qj, vj, aj in coords
            )
            torques.append(sp.simplify(total - sp.diff(kinetic, qi)
                                       + sp.diff(potential, qi)))
        args = (q1, q2, v1, v2, a1, a2)
        self._torque = sp.lambdify(args, torques, "numpy")
        mass = sp.hessian(kinetic, (v1, v2))
        self._mass = sp.lambdify((q1, q2), mass, "numpy")
        gravity_vec = [sp.diff(potential, q1), sp.diff(potential, q2)]
        self._gravity = sp.lambdify((q1, q2), gravity_vec, "numpy")

    def torque(self, q, dq, ddq) -> np.ndarray:
        return np.asarray(self._torque(q[0], q[1], dq[0], dq[1], ddq[0], ddq[1]),
                          dtype=float)

    def mass_matrix(self, q) -> np.ndarray:
        return np.asarray(self._mass(q[0], q[1]), dtype=float)

    def gravity(self, q) -> np.ndarray:
        return np.asarray(self._gravity(q[0], q[1]), dtype=float)


@pytest.fixture(scope="session")
def lagrangian_oracle() -> LagrangianOracle:
    return LagrangianOracle(default_dynamic_params())


def random_states(rng, count, q_range=np.pi, dq_range=3.0, ddq_range=3.0):
    q = rng.uniform(-q_range, q_range, (count, 2))
    dq = rng.uniform(-dq_range, dq_range, (count, 2))
    ddq = rng.uniform(-ddq_range, ddq_range, (count, 2))
    return q, dq, ddq


def dense_gp_posterior(kernel, x_train, y_train, noise, x_test):
    """Naive Gaussian conditioning through a dense inverse (oracle)."""
    k = kernel(x_train)
    ky_inv = np.linalg.inv(k + noise * np.eye(len(x_train)))
    k_star = kernel(x_test, x_train)
    mean = k_star @ ky_inv @ y_train
    cov = kernel(x_test) - k_star @ ky_inv @ k_star.T
    return mean, np.diag(cov)


def central_difference(fun, theta, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        up = theta.copy()
        up[j] += h
        down = theta.copy()
        down[j] -= h
        grad[j] = (fun(up) - fun(down)) / (2.0 * h)
    return grad
