"""Feature maps from trajectory samples to model inputs.

Two input layouts are used throughout:

* standard: ``[q, dq, ddq]`` (3n values)
* augmented: ``[q, dq, ddq, e_q, de_q, i_cmd]`` (6n values)

The first 3n entries of the augmented layout always equal the standard
layout of the same sample. The regressor row of joint ``l`` splits into five
dynamic columns (pure functions of the motion state) and the two friction
columns ``[sign(dq_l), dq_l]``; in the gated variant the friction columns are
zeroed whenever ``|dq_l|`` is inside the quasi-static band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DEFAULT_VELOCITY_BAND, regressor_columns
from .trajectory import JointSample, Trajectory

N_JOINTS = 2


def velocity_index(joint: int, n_joints: int = N_JOINTS) -> int:
    """Column of ``dq_joint`` in both the standard and augmented layouts."""
    return n_joints + joint


def _blocks(obj):
    if isinstance(obj, JointSample):
        return (obj.q[None], obj.dq[None], obj.ddq[None], obj.e_q[None],
                obj.de_q[None], obj.i_cmd[None])
    if isinstance(obj, Trajectory):
        return (obj.q, obj.dq, obj.ddq, obj.e_q, obj.de_q, obj.i_cmd)
    if isinstance(obj, (list, tuple)):
        parts = [_blocks(item) for item in obj]
        return tuple(np.vstack([p[i] for p in parts]) for i in range(6))
    raise TypeError(f"cannot extract features from {type(obj).__name__}")


def standard_features(obj) -> np.ndarray:
    """Map a sample or trajectory to the 3n standard input layout."""
    q, dq, ddq, _, _, _ = _blocks(obj)
    out = np.hstack([q, dq, ddq])
    return out[0] if isinstance(obj, JointSample) else out


def augmented_features(obj) -> np.ndarray:
    """Map a sample or trajectory to the 6n augmented input layout."""
    out = np.hstack(_blocks(obj))
    return out[0] if isinstance(obj, JointSample) else out


def measured_currents(obj) -> np.ndarray:
    """Measured current matrix (N, n) of a trajectory or list of them."""
    if isinstance(obj, Trajectory):
        return obj.i_meas
    return np.vstack([measured_currents(item) for item in obj])


@dataclass(frozen=True)
class RegressorRow:
    """Linear-model feature row of one joint: dynamic and friction columns."""

    dynamic: np.ndarray
    friction: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.dynamic, self.friction])


def regressor_matrix(source, joint: int, gated: bool = False,
                     band: float = DEFAULT_VELOCITY_BAND) -> np.ndarray:
    """Stacked regressor rows ``[dynamic | friction]`` for one joint.

    ``source`` may be a feature matrix in either layout (the first 3n columns
    are used), a :class:`Trajectory` or a :class:`JointSample`. With
    ``gated=True`` the friction columns are zeroed on quasi-static rows;
    applying the gate twice equals applying it once.
    """
    if isinstance(source, JointSample):
        return regressor_matrix(standard_features(source)[None], joint,
                                gated=gated, band=band)[0]
    if isinstance(source, Trajectory):
        source = standard_features(source)
    x = np.asarray(source, dtype=float)
    if x.ndim != 2 or x.shape[1] < 3 * N_JOINTS:
        raise ValueError("expected a feature matrix with at least "
                         f"{3 * N_JOINTS} columns")
    if not 0 <= joint < N_JOINTS:
        raise IndexError(f"joint index {joint} out of range")
    q = x[:, 0:N_JOINTS]
    dq = x[:, N_JOINTS:2 * N_JOINTS]
    ddq = x[:, 2 * N_JOINTS:3 * N_JOINTS]
    dynamic = regressor_columns(q, dq, ddq)[:, joint, :]
    v = dq[:, joint]
    friction = np.stack([np.sign(v), v], axis=1)
    if gated:
        friction[np.abs(v) < band] = 0.0
    return np.hstack([dynamic, friction])


def regressor_row(sample: JointSample, joint: int, gated: bool = False,
                  band: float = DEFAULT_VELOCITY_BAND) -> RegressorRow:
    """Regressor row of one joint for a single sample."""
    row = regressor_matrix(sample, joint, gated=gated, band=band)
    return RegressorRow(dynamic=row[:5], friction=row[5:])


class FeatureScaler:
    """Per-dimension standardization fitted on training inputs.

    Zero-variance dimensions keep unit scale so constant features pass
    through unchanged (up to centering).
    """

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    def fit(self, x) -> "FeatureScaler":
        x = np.asarray(x, dtype=float)
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, x) -> np.ndarray:
        if self.mean_ is None:
            raise RuntimeError("scaler is not fitted")
        return (np.asarray(x, dtype=float) - self.mean_) / self.scale_

    def fit_transform(self, x) -> np.ndarray:
        return self.fit(x).transform(x)

    def to_dict(self) -> dict:
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureScaler":
        scaler = cls()
        scaler.mean_ = np.asarray(payload["mean"], dtype=float)
        scaler.scale_ = np.asarray(payload["scale"], dtype=float)
        return scaler
