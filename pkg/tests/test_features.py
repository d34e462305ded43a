import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_states
from gpcd.features import (
    FeatureScaler,
    augmented_features,
    measured_currents,
    regressor_matrix,
    regressor_row,
    standard_features,
    velocity_index,
)
from gpcd.simulate import SimConfig, generate_dataset
from gpcd.trajectory import JointSample


def make_sample(q, dq, ddq, q_ref=None, dq_ref=None, i_cmd=None):
    q = np.asarray(q, dtype=float)
    return JointSample(
        t=0.0, q=q, dq=np.asarray(dq, float), ddq=np.asarray(ddq, float),
        q_ref=np.asarray(q_ref if q_ref is not None else q, float),
        dq_ref=np.asarray(dq_ref if dq_ref is not None else dq, float),
        i_cmd=np.asarray(i_cmd if i_cmd is not None else np.zeros(2), float),
        i_meas=np.zeros(2), tau_ext=np.zeros(2),
        stuck=np.zeros(2, dtype=bool),
    )


class TestLayouts:
    def test_zero_sample_maps_to_zero(self):
        sample = make_sample(np.zeros(2), np.zeros(2), np.zeros(2))
        assert standard_features(sample).shape == (6,)
        np.testing.assert_array_equal(standard_features(sample), np.zeros(6))
        np.testing.assert_array_equal(augmented_features(sample), np.zeros(12))

    def test_standard_layout_order(self):
        sample = make_sample((1, 2), (3, 4), (5, 6))
        np.testing.assert_array_equal(standard_features(sample),
                                      [1, 2, 3, 4, 5, 6])

    def test_standard_is_prefix_of_augmented(self, plant):
        traj = generate_dataset({"kind": "random-waypoints"}, seed=21,
                                plant=plant, config=SimConfig(seed=21))[0]
        std = standard_features(traj)
        aug = augmented_features(traj)
        np.testing.assert_array_equal(aug[:, :6], std)

    def test_perfect_tracking_zeroes_error_blocks(self):
        sample = make_sample((1, 2), (3, 4), (5, 6))
        aug = augmented_features(sample)
        np.testing.assert_array_equal(aug[6:10], np.zeros(4))

    def test_error_columns_match_refs(self, plant):
        traj = generate_dataset({"kind": "rest-move-cycle"}, seed=2,
                                plant=plant, config=SimConfig(seed=2))[0]
        aug = augmented_features(traj)
        np.testing.assert_array_equal(aug[:, 6:8], traj.q_ref - traj.q)
        np.testing.assert_array_equal(aug[:, 8:10], traj.dq_ref - traj.dq)
        np.testing.assert_array_equal(aug[:, 10:12], traj.i_cmd)

    def test_list_input_stacks(self, plant):
        trajs = generate_dataset({"kind": "random-waypoints", "count": 2},
                                 seed=3, plant=plant, config=SimConfig(seed=3))
        stacked = augmented_features(trajs)
        assert stacked.shape == (sum(len(t) for t in trajs), 12)
        np.testing.assert_array_equal(measured_currents(trajs)[:, 0],
                                      np.concatenate([t.i_meas[:, 0]
                                                      for t in trajs]))


class TestRegressor:
    def test_friction_columns_ungated(self):
        sample = make_sample((0, 0), (0.5, 0.0), (0, 0))
        row = regressor_row(sample, joint=0, gated=True, band=1e-2)
        np.testing.assert_array_equal(row.friction, [1.0, 0.5])

    def test_friction_columns_gated_out(self):
        sample = make_sample((0, 0), (0.005, 0.0), (0, 0))
        row = regressor_row(sample, joint=0, gated=True, band=1e-2)
        np.testing.assert_array_equal(row.friction, [0.0, 0.0])

    def test_friction_columns_no_gate(self):
        sample = make_sample((0, 0), (0.005, 0.0), (0, 0))
        row = regressor_row(sample, joint=0, gated=False, band=1e-2)
        np.testing.assert_array_equal(row.friction, [1.0, 0.005])

    def test_sign_zero_convention(self):
        sample = make_sample((0, 0), (0.0, -0.0), (0, 0))
        row = regressor_row(sample, joint=0, gated=False)
        assert row.friction[0] == 0.0

    def test_dynamic_times_parameters_reproduces_torque(self, arm):
        rng = np.random.default_rng(4)
        q, dq, ddq = random_states(rng, 300)
        x = np.hstack([q, dq, ddq])
        for joint in (0, 1):
            rows = regressor_matrix(x, joint)
            torque = rows[:, :5] @ arm.min_parameters
            direct = np.stack([arm.inverse_dynamics(q[k], dq[k], ddq[k])[joint]
                               for k in range(len(q))])
            assert np.abs(torque - direct).max() <= 1e-10

    def test_gating_idempotent(self, plant):
        traj = generate_dataset({"kind": "rest-move-cycle"}, seed=6,
                                plant=plant, config=SimConfig(seed=6))[0]
        x = augmented_features(traj)
        once = regressor_matrix(x, 0, gated=True)
        again = once.copy()
        v = again[:, 6]  # velocity column of the friction block
        again[np.abs(v) < 1e-2, 5:] = 0.0
        np.testing.assert_array_equal(once, again)

    def test_joint_out_of_range(self):
        with pytest.raises(IndexError):
            regressor_matrix(np.zeros((3, 12)), joint=2)

    def test_velocity_index(self):
        assert velocity_index(0) == 2
        assert velocity_index(1) == 3


class TestScaler:
    def test_roundtrip_through_dict(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(50, 12))
        scaler = FeatureScaler().fit(x)
        clone = FeatureScaler.from_dict(scaler.to_dict())
        np.testing.assert_allclose(clone.transform(x), scaler.transform(x))

    def test_zero_variance_dimension_passes_through(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        scaled = FeatureScaler().fit_transform(x)
        np.testing.assert_array_equal(scaled[:, 0], np.zeros(10))
        assert scaled[:, 1].std() == pytest.approx(1.0)

    @given(st.integers(min_value=2, max_value=30))
    @settings(max_examples=20, deadline=None)
    def test_standardized_moments(self, rows):
        rng = np.random.default_rng(rows)
        x = rng.normal(2.0, 3.0, size=(rows, 4))
        scaled = FeatureScaler().fit_transform(x)
        np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
