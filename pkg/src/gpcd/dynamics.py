"""Planar two-link arm with geared motors and stiction friction.

Joint angles are measured from the horizontal x axis, gravity acts along -y.
Each joint is driven by a current-controlled motor through a rigid gearbox,
which on the joint side adds a constant reflected rotor inertia
``gear_ratio**2 * rotor_inertia``, a damping term ``gear_ratio**2 * damping``
and converts current to torque with gain ``torque_constant * gear_ratio``.

Friction follows a static/kinetic/viscous law with an explicit velocity band:
inside the band the joint is treated as quasi-static and friction cancels the
applied load up to the breakaway level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularInertiaError, UnreachableTargetError

DEFAULT_VELOCITY_BAND = 1e-2
"""Velocity magnitude (rad/s) under which a joint counts as quasi-static."""

_COND_LIMIT = 1e12


def _param_vector(values, name, length=None):
    arr = np.atleast_1d(np.asarray(values, dtype=float)).copy()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a scalar or a 1-D sequence")
    if length is not None and arr.size == 1 and length > 1:
        arr = np.full(length, arr[0])
    if length is not None and arr.size != length:
        raise ValueError(f"{name} must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class DynamicParams:
    """Link-side rigid-body parameters of the arm.

    ``masses``, ``lengths``, ``com_offsets`` and ``inertias`` are per-link;
    inertias are taken about each link's center of mass.
    """

    masses: np.ndarray
    lengths: np.ndarray
    com_offsets: np.ndarray
    inertias: np.ndarray
    gravity: float = 9.81

    def __post_init__(self):
        object.__setattr__(self, "masses", _param_vector(self.masses, "masses"))
        n = self.masses.size
        for name in ("lengths", "com_offsets", "inertias"):
            object.__setattr__(self, name, _param_vector(getattr(self, name), name, n))
        object.__setattr__(self, "gravity", float(self.gravity))
        if np.any(self.masses <= 0):
            raise ValueError("masses must be positive")
        if np.any(self.lengths <= 0):
            raise ValueError("lengths must be positive")
        if np.any(self.inertias <= 0):
            raise ValueError("inertias must be positive")
        if self.gravity < 0:
            raise ValueError("gravity must be non-negative")

    @property
    def n_links(self) -> int:
        return self.masses.size

    @property
    def min_parameters(self) -> np.ndarray:
        """Minimal dynamic parameter vector of the two-link arm.

        Five entries: the three inertial combinations that populate the mass
        matrix and Coriolis terms plus the two gravity coefficients. Together
        with the matching regressor they express the link-side inverse
        dynamics as a model linear in the parameters.
        """
        if self.n_links != 2:
            raise ValueError("minimal parameterization implemented for 2 links only")
        m1, m2 = self.masses
        l1 = self.lengths[0]
        lc1, lc2 = self.com_offsets
        i1, i2 = self.inertias
        return np.array(
            [
                i1 + i2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2),
                m2 * l1 * lc2,
                i2 + m2 * lc2**2,
                self.gravity * (m1 * lc1 + m2 * l1),
                self.gravity * m2 * lc2,
            ]
        )


@dataclass(frozen=True)
class MotorParams:
    """Per-joint motor and gearbox nameplate constants.

    These are treated as known datasheet values throughout the package; only
    the link dynamics and friction coefficients are ever estimated from data.
    """

    rotor_inertia: np.ndarray
    damping: np.ndarray
    torque_constant: np.ndarray
    gear_ratio: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotor_inertia", _param_vector(self.rotor_inertia, "rotor_inertia")
        )
        n = self.rotor_inertia.size
        for name in ("damping", "torque_constant", "gear_ratio"):
            object.__setattr__(self, name, _param_vector(getattr(self, name), name, n))
        for name in ("rotor_inertia", "damping", "torque_constant", "gear_ratio"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} entries must be positive")

    @property
    def n_joints(self) -> int:
        return self.rotor_inertia.size

    def expand(self, n: int) -> "MotorParams":
        """Broadcast shared (single-value) parameters to ``n`` joints."""
        if self.n_joints == n:
            return self
        if self.n_joints != 1:
            raise ValueError(f"cannot expand {self.n_joints}-joint motor "
                             f"parameters to {n} joints")
        return MotorParams(
            rotor_inertia=np.full(n, self.rotor_inertia[0]),
            damping=np.full(n, self.damping[0]),
            torque_constant=np.full(n, self.torque_constant[0]),
            gear_ratio=np.full(n, self.gear_ratio[0]),
        )

    @property
    def inertia_offset(self) -> np.ndarray:
        """Rotor inertia reflected to the joint side."""
        return self.gear_ratio**2 * self.rotor_inertia

    @property
    def damping_eq(self) -> np.ndarray:
        """Motor damping reflected to the joint side."""
        return self.gear_ratio**2 * self.damping

    @property
    def current_gain(self) -> np.ndarray:
        """Joint torque produced per ampere of motor current."""
        return self.torque_constant * self.gear_ratio

    def feedforward_torque(self, dq, ddq) -> np.ndarray:
        """Joint torque absorbed by the drive train itself (known terms)."""
        return np.asarray(ddq) * self.inertia_offset + np.asarray(dq) * self.damping_eq


@dataclass(frozen=True)
class FrictionParams:
    """Per-joint static, kinetic and viscous friction coefficients."""

    static: np.ndarray
    kinetic: np.ndarray
    viscous: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "static", _param_vector(self.static, "static"))
        n = self.static.size
        for name in ("kinetic", "viscous"):
            object.__setattr__(self, name, _param_vector(getattr(self, name), name, n))
        if np.any(self.kinetic < 0) or np.any(self.viscous < 0):
            raise ValueError("friction coefficients must be non-negative")
        if np.any(self.static < self.kinetic):
            raise ValueError("breakaway level must be at least the kinetic level")

    @property
    def n_joints(self) -> int:
        return self.static.size

    def expand(self, n: int) -> "FrictionParams":
        """Broadcast shared (single-value) coefficients to ``n`` joints."""
        if self.n_joints == n:
            return self
        if self.n_joints != 1:
            raise ValueError(f"cannot expand {self.n_joints}-joint friction "
                             f"parameters to {n} joints")
        return FrictionParams(static=np.full(n, self.static[0]),
                              kinetic=np.full(n, self.kinetic[0]),
                              viscous=np.full(n, self.viscous[0]))


class PlanarTwoLinkArm:
    """Closed-form dynamics of a revolute-revolute arm in a vertical plane."""

    n_joints = 2

    def __init__(self, dynamic: DynamicParams, motor: MotorParams):
        if dynamic.n_links != 2:
            raise ValueError("PlanarTwoLinkArm requires exactly 2 links")
        self.dynamic = dynamic
        self.motor = motor.expand(2)
        m1, m2 = dynamic.masses
        l1 = dynamic.lengths[0]
        lc1, lc2 = dynamic.com_offsets
        i1, i2 = dynamic.inertias
        self._a1 = i1 + i2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2)
        self._a2 = m2 * l1 * lc2
        self._a3 = i2 + m2 * lc2**2
        self._g1 = dynamic.gravity * (m1 * lc1 + m2 * l1)
        self._g2 = dynamic.gravity * m2 * lc2

    # -- rigid body terms --------------------------------------------------

    def mass_matrix(self, q) -> np.ndarray:
        c2 = np.cos(q[1])
        m12 = self._a3 + self._a2 * c2
        return np.array(
            [[self._a1 + 2.0 * self._a2 * c2, m12], [m12, self._a3]]
        )

    def equivalent_mass_matrix(self, q) -> np.ndarray:
        """Mass matrix including the reflected rotor inertias."""
        return self.mass_matrix(q) + np.diag(self.motor.inertia_offset)

    def coriolis_torque(self, q, dq) -> np.ndarray:
        h = self._a2 * np.sin(q[1])
        return np.array(
            [-h * (2.0 * dq[0] * dq[1] + dq[1] ** 2), h * dq[0] ** 2]
        )

    def gravity_torque(self, q) -> np.ndarray:
        c1 = np.cos(q[0])
        c12 = np.cos(q[0] + q[1])
        return np.array([self._g1 * c1 + self._g2 * c12, self._g2 * c12])

    def inverse_dynamics(self, q, dq, ddq) -> np.ndarray:
        """Link-side torque for a given motion state (no motor or friction)."""
        return (
            self.mass_matrix(q) @ np.asarray(ddq)
            + self.coriolis_torque(q, dq)
            + self.gravity_torque(q)
        )

    def regressor(self, q, dq, ddq) -> np.ndarray:
        """Per-joint rows of the linear-in-parameters inverse dynamics model.

        ``regressor(q, dq, ddq) @ min_parameters`` reproduces
        :meth:`inverse_dynamics`.
        """
        return regressor_columns(q, dq, ddq)

    @property
    def min_parameters(self) -> np.ndarray:
        return self.dynamic.min_parameters

    # -- kinematics --------------------------------------------------------

    @property
    def reach(self) -> float:
        return float(self.dynamic.lengths.sum())

    def forward_kinematics(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        l1, l2 = self.dynamic.lengths
        x = l1 * np.cos(q[..., 0]) + l2 * np.cos(q[..., 0] + q[..., 1])
        y = l1 * np.sin(q[..., 0]) + l2 * np.sin(q[..., 0] + q[..., 1])
        return np.stack([x, y], axis=-1)

    def inverse_kinematics(self, target, elbow="up") -> np.ndarray:
        """Joint angles reaching the Cartesian ``target`` point.

        Raises :class:`UnreachableTargetError` when the point lies outside the
        annular workspace.
        """
        x, y = float(target[0]), float(target[1])
        l1, l2 = self.dynamic.lengths
        r2 = x * x + y * y
        c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if not -1.0 <= c2 <= 1.0:
            raise UnreachableTargetError((x, y))
        q2 = np.arccos(c2)
        if elbow == "down":
            q2 = -q2
        q1 = np.arctan2(y, x) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
        return np.array([q1, q2])


def regressor_columns(q, dq, ddq) -> np.ndarray:
    """Regressor rows of the two-link inverse dynamics, one row per joint.

    The columns are pure functions of the motion state (no parameters), so
    stacking them against the minimal parameter vector expresses the
    link-side torque as a model linear in the parameters. Accepts single
    states of shape (2,) or batches of shape (N, 2) and returns (2, 5) or
    (N, 2, 5).
    """
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    ddq = np.asarray(ddq, dtype=float)
    q1, q2 = q[..., 0], q[..., 1]
    v1, v2 = dq[..., 0], dq[..., 1]
    a1, a2 = ddq[..., 0], ddq[..., 1]
    c2, s2 = np.cos(q2), np.sin(q2)
    c1 = np.cos(q1)
    c12 = np.cos(q1 + q2)
    zero = np.zeros_like(q1)
    row1 = np.stack(
        [a1, c2 * (2.0 * a1 + a2) - s2 * (2.0 * v1 * v2 + v2**2), a2, c1, c12],
        axis=-1,
    )
    row2 = np.stack([zero, c2 * a1 + s2 * v1**2, a1 + a2, zero, c12], axis=-1)
    return np.stack([row1, row2], axis=-2)


def friction_torque(velocity, applied_torque, friction: FrictionParams,
                    band=DEFAULT_VELOCITY_BAND):
    """Joint friction torque under the stiction/kinetic/viscous law.

    Inside the velocity band the friction cancels the applied load up to the
    breakaway level; once the load exceeds it, the kinetic level opposing the
    load applies for that instant. Outside the band the usual kinetic plus
    viscous law holds. Total function, vectorized over joints.
    """
    v = np.asarray(velocity, dtype=float)
    tau = np.asarray(applied_torque, dtype=float)
    fs, fk, fv = friction.static, friction.kinetic, friction.viscous
    slow = np.abs(v) < band
    held = slow & (np.abs(tau) <= fs)
    out = np.where(
        held, tau, np.where(slow, fk * np.sign(tau), fk * np.sign(v) + fv * v)
    )
    scalar_in = np.ndim(velocity) == 0 and np.ndim(applied_torque) == 0
    if scalar_in and out.size == 1:
        return out.reshape(()).item()
    return out


def resolve_accelerations(q, dq, drive_torque, arm: PlanarTwoLinkArm,
                          friction: FrictionParams, band=DEFAULT_VELOCITY_BAND,
                          check_conditioning=False):
    """Joint accelerations under the stiction law, with joint coupling.

    ``drive_torque`` collects every torque except rigid-body, drive-damping
    and friction terms (motor torque, external and disturbance torques).
    Joints inside the velocity band have their velocity pinned to exactly
    zero; a pinned joint stays at zero acceleration while the torque needed
    to hold it is within the breakaway level, otherwise it is released with
    the kinetic friction level opposing the load.

    Returns ``(ddq, friction_torque, stuck, dq_pinned)``.
    """
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    drive = np.asarray(drive_torque, dtype=float)
    n = q.size
    friction = friction.expand(n)
    fs, fk, fv = friction.static, friction.kinetic, friction.viscous

    candidates = (np.abs(dq) < band) & (fs > 0)
    dq_eff = np.where(candidates, 0.0, dq)
    m_eq = arm.equivalent_mass_matrix(q)
    if check_conditioning:
        cond = np.linalg.cond(m_eq)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularInertiaError(cond)
    bias = (
        drive
        - arm.coriolis_torque(q, dq_eff)
        - arm.gravity_torque(q)
        - arm.motor.damping_eq * dq_eff
    )

    stuck = candidates.copy()
    release_sign = np.zeros(n)
    for _ in range(n + 1):
        free = ~stuck
        tau_f = np.zeros(n)
        fast = free & (np.abs(dq_eff) >= band)
        tau_f[fast] = fk[fast] * np.sign(dq_eff[fast]) + fv[fast] * dq_eff[fast]
        released = free & ~fast
        tau_f[released] = fk[released] * release_sign[released]
        ddq = np.zeros(n)
        if free.any():
            sub = m_eq[np.ix_(free, free)]
            ddq[free] = np.linalg.solve(sub, (bias - tau_f)[free])
        hold = bias - m_eq @ ddq
        exceeded = stuck & (np.abs(hold) > fs)
        if not exceeded.any():
            tau_f = np.where(stuck, hold, tau_f)
            return ddq, tau_f, stuck, dq_eff
        release_sign[exceeded] = np.sign(hold[exceeded])
        stuck &= ~exceeded
    raise RuntimeError("stiction resolution did not converge")  # pragma: no cover


def forward_dynamics(q, dq, current, tau_ext, arm: PlanarTwoLinkArm,
                     friction: FrictionParams, band=DEFAULT_VELOCITY_BAND):
    """Joint accelerations for a given motor current and external torque."""
    drive = arm.motor.current_gain * np.asarray(current, dtype=float) + np.asarray(
        tau_ext, dtype=float
    )
    ddq, _, _, _ = resolve_accelerations(
        q, dq, drive, arm, friction, band=band, check_conditioning=True
    )
    return ddq
