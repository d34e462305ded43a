import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_states
from gpcd.dynamics import (
    DEFAULT_VELOCITY_BAND,
    DynamicParams,
    FrictionParams,
    MotorParams,
    PlanarTwoLinkArm,
    forward_dynamics,
    friction_torque,
    regressor_columns,
)
from gpcd.errors import SingularInertiaError, UnreachableTargetError


class TestParams:
    def test_invalid_masses_rejected(self):
        with pytest.raises(ValueError):
            DynamicParams(masses=(0.0, 1.0), lengths=(0.5, 0.5),
                          com_offsets=(0.25, 0.25), inertias=(0.1, 0.1))

    def test_breakaway_below_kinetic_rejected(self):
        with pytest.raises(ValueError):
            FrictionParams(static=0.1, kinetic=0.4, viscous=0.3)

    def test_motor_params_positive(self):
        with pytest.raises(ValueError):
            MotorParams(rotor_inertia=0.0, damping=1e-4, torque_constant=0.1,
                        gear_ratio=100.0)

    def test_min_parameter_dimension_is_five(self, arm):
        assert arm.min_parameters.shape == (5,)


class TestLagrangianAgreement:
    def test_inverse_dynamics_matches_oracle(self, arm, lagrangian_oracle):
        rng = np.random.default_rng(0)
        q, dq, ddq = random_states(rng, 200)
        for k in range(len(q)):
            ours = arm.inverse_dynamics(q[k], dq[k], ddq[k])
            ref = lagrangian_oracle.torque(q[k], dq[k], ddq[k])
            np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-10)

    def test_mass_matrix_matches_oracle(self, arm, lagrangian_oracle):
        rng = np.random.default_rng(1)
        q, _, _ = random_states(rng, 50)
        for k in range(len(q)):
            np.testing.assert_allclose(arm.mass_matrix(q[k]),
                                       lagrangian_oracle.mass_matrix(q[k]),
                                       rtol=0, atol=1e-12)

    def test_regressor_reproduces_torque(self, arm):
        rng = np.random.default_rng(2)
        q, dq, ddq = random_states(rng, 1000)
        phi = regressor_columns(q, dq, ddq)
        predicted = phi @ arm.min_parameters
        direct = np.stack([arm.inverse_dynamics(q[k], dq[k], ddq[k])
                           for k in range(len(q))])
        assert np.abs(predicted - direct).max() <= 1e-10


class TestFrictionTorque:
    def test_stiction_cancels_load(self, friction):
        assert friction_torque(0.0, 0.3, friction) == pytest.approx(0.3)

    def test_zero_load_zero_friction(self, friction):
        assert friction_torque(0.0, 0.0, friction) == 0.0

    def test_kinetic_branch(self, friction):
        value = friction_torque(1.0, 123.0, friction)
        assert value == pytest.approx(0.4 + 0.3)

    def test_breakaway_opposes_load(self, friction):
        value = friction_torque(0.0, -2.0, friction)
        assert value == pytest.approx(-0.4)

    @given(v=st.floats(min_value=-10, max_value=10),
           load=st.floats(min_value=-50, max_value=50))
    @settings(max_examples=60, deadline=None)
    def test_kinetic_dissipativity(self, v, load):
        friction = FrictionParams(static=0.6, kinetic=0.4, viscous=0.3)
        if abs(v) < DEFAULT_VELOCITY_BAND:
            return
        assert friction_torque(v, load, friction) * v >= 0.0


class TestForwardDynamics:
    def test_matches_oracle_frictionless(self, arm, frictionless,
                                         lagrangian_oracle):
        q = np.array([np.pi / 4, np.pi / 4])
        dq = np.zeros(2)
        ddq = forward_dynamics(q, dq, np.zeros(2), np.zeros(2), arm,
                               frictionless)
        m_eq = lagrangian_oracle.mass_matrix(q) + np.diag(arm.motor.inertia_offset)
        expected = np.linalg.solve(m_eq, -lagrangian_oracle.gravity(q))
        np.testing.assert_allclose(ddq, expected, rtol=0, atol=1e-10)

    def test_linear_in_external_torque(self, arm, frictionless):
        q = np.array([np.pi / 4, np.pi / 4])
        dq = np.zeros(2)
        base = forward_dynamics(q, dq, np.zeros(2), np.zeros(2), arm,
                                frictionless)
        pushed = forward_dynamics(q, dq, np.zeros(2), np.array([1.0, 0.0]),
                                  arm, frictionless)
        expected = np.linalg.solve(arm.equivalent_mass_matrix(q),
                                   np.array([1.0, 0.0]))
        np.testing.assert_allclose(pushed - base, expected, rtol=0, atol=1e-10)

    def test_gravity_compensated_stiction_is_fixed(self, arm, friction):
        q = np.array([0.7, -0.4])
        i_hold = arm.gravity_torque(q) / arm.motor.current_gain
        ddq = forward_dynamics(q, np.zeros(2), i_hold, np.zeros(2), arm,
                               friction)
        np.testing.assert_array_equal(ddq, np.zeros(2))

    def test_breakaway_when_load_exceeds_static(self, arm, friction):
        q = np.array([0.7, -0.4])
        # A large torque on joint 1 overwhelms the breakaway level.
        i = arm.gravity_torque(q) / arm.motor.current_gain
        i[0] += 5.0 / arm.motor.current_gain[0]
        ddq = forward_dynamics(q, np.zeros(2), i, np.zeros(2), arm, friction)
        assert ddq[0] > 0.0

    def test_stiction_consistency(self, arm, friction):
        # Whenever a joint is held, |holding torque| <= breakaway level.
        from gpcd.dynamics import resolve_accelerations
        rng = np.random.default_rng(5)
        friction = friction.expand(2)
        for _ in range(100):
            q = rng.uniform(-np.pi, np.pi, 2)
            dq = rng.uniform(-0.008, 0.008, 2)
            drive = rng.uniform(-1.0, 1.0, 2)
            ddq, tau_f, stuck, dq_pinned = resolve_accelerations(
                q, dq, drive, arm, friction)
            assert np.all(dq_pinned[stuck] == 0.0)
            assert np.all(ddq[stuck] == 0.0)
            assert np.all(np.abs(tau_f[stuck]) <= friction.static[stuck] + 1e-12)

    def test_singular_inertia_reported(self, frictionless):
        # Degenerate geometry: zero-offset point masses with tiny inertias
        # make the equivalent mass matrix numerically singular.
        dynamic = DynamicParams(masses=(1.0, 1.0), lengths=(0.5, 0.5),
                                com_offsets=(1e-12, 1e-12),
                                inertias=(1e-18, 1e-18), gravity=0.0)
        motor = MotorParams(rotor_inertia=1e-18, damping=1e-18,
                            torque_constant=1.0, gear_ratio=1.0)
        arm = PlanarTwoLinkArm(dynamic, motor)
        with pytest.raises(SingularInertiaError):
            forward_dynamics(np.zeros(2), np.array([1.0, 1.0]), np.zeros(2),
                             np.zeros(2), arm, frictionless)


class TestKinematics:
    def test_ik_fk_roundtrip(self, arm):
        rng = np.random.default_rng(7)
        for _ in range(50):
            r = rng.uniform(0.2, 0.95) * arm.reach
            theta = rng.uniform(-np.pi, np.pi)
            target = np.array([r * np.cos(theta), r * np.sin(theta)])
            q = arm.inverse_kinematics(target)
            np.testing.assert_allclose(arm.forward_kinematics(q), target,
                                       atol=1e-10)

    def test_unreachable_target_rejected(self, arm):
        with pytest.raises(UnreachableTargetError) as excinfo:
            arm.inverse_kinematics((2.0, 0.0))
        assert excinfo.value.target == (2.0, 0.0)
