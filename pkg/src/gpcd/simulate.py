"""Closed-loop simulation of the arm and the scenario generators.

The stepper uses semi-implicit Euler at the sampling period of the logged
data, so no resampling layer sits between simulation and learning. The
current loop of the drives is taken as ideal: the plant is driven by the
commanded current while the logged measurement adds sensor noise on top of
the command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .dynamics import (
    DEFAULT_VELOCITY_BAND,
    DynamicParams,
    FrictionParams,
    MotorParams,
    PlanarTwoLinkArm,
    resolve_accelerations,
)
from .errors import NonFiniteStateError
from .trajectory import Trajectory

SCENARIO_KINDS = ("random-waypoints", "circle-track", "rest-move-cycle",
                  "collision-episodes")


def _vector(values, name, length):
    arr = np.atleast_1d(np.asarray(values, dtype=float)).copy()
    if arr.size == 1 and length > 1:
        arr = np.full(length, arr[0])
    if arr.size != length:
        raise ValueError(f"{name} must have length {length}")
    return arr


@dataclass(frozen=True)
class ControllerParams:
    """Per-joint PID current controller with saturation and anti-windup."""

    kp: np.ndarray
    kd: np.ndarray
    ki: np.ndarray
    saturation: np.ndarray
    windup_limit: np.ndarray

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.kp, dtype=float)).size
        for name in ("kp", "kd", "ki", "saturation", "windup_limit"):
            object.__setattr__(self, name, _vector(getattr(self, name), name, n))
        for name in ("kp", "kd", "ki"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} gains must be non-negative")
        if np.any(self.saturation <= 0):
            raise ValueError("saturation must be positive")
        if np.any(self.windup_limit <= 0):
            raise ValueError("windup_limit must be positive")

    @property
    def n_joints(self) -> int:
        return self.kp.size

    def expand(self, n: int) -> "ControllerParams":
        """Broadcast shared (single-value) gains to ``n`` joints."""
        if self.n_joints == n:
            return self
        if self.n_joints != 1:
            raise ValueError(f"cannot expand {self.n_joints}-joint controller "
                             f"parameters to {n} joints")
        return ControllerParams(kp=np.full(n, self.kp[0]),
                                kd=np.full(n, self.kd[0]),
                                ki=np.full(n, self.ki[0]),
                                saturation=np.full(n, self.saturation[0]),
                                windup_limit=np.full(n, self.windup_limit[0]))


@dataclass(frozen=True)
class SimConfig:
    """Sampling, noise and logging options of a simulation run."""

    dt: float = 8e-3
    current_noise_std: float = 0.005
    disturbance_std: float = 0.0
    seed: int = 0
    description: str = ""
    velocity_band: float = DEFAULT_VELOCITY_BAND
    differenced_acceleration: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.current_noise_std < 0 or self.disturbance_std < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class Plant:
    """Bundle of everything that defines the simulated machine."""

    dynamic: DynamicParams
    motor: MotorParams
    friction: FrictionParams
    controller: ControllerParams

    def __post_init__(self):
        n = self.dynamic.n_links
        object.__setattr__(self, "motor", self.motor.expand(n))
        object.__setattr__(self, "friction", self.friction.expand(n))
        object.__setattr__(self, "controller", self.controller.expand(n))

    @cached_property
    def arm(self) -> PlanarTwoLinkArm:
        return PlanarTwoLinkArm(self.dynamic, self.motor)

    @property
    def n_joints(self) -> int:
        return self.motor.n_joints

    @classmethod
    def default(cls) -> "Plant":
        """Desk-scale two-link arm with gravity, friction and inertial
        currents of the same order of magnitude. Values are configuration
        defaults, not claims about any particular machine."""
        dynamic = DynamicParams(
            masses=(2.0, 1.0),
            lengths=(0.5, 0.5),
            com_offsets=(0.25, 0.25),
            inertias=(2.0 * 0.5**2 / 12.0, 1.0 * 0.5**2 / 12.0),
            gravity=9.81,
        )
        motor = MotorParams(
            rotor_inertia=1e-4, damping=1e-4, torque_constant=0.1, gear_ratio=100.0
        )
        friction = FrictionParams(static=0.6, kinetic=0.4, viscous=0.3)
        controller = ControllerParams(
            kp=20.0, kd=3.0, ki=0.5, saturation=10.0, windup_limit=3.0
        )
        return cls(dynamic, motor, friction, controller)


@dataclass
class SimState:
    """Mutable integration state of one stepping context."""

    t: float
    q: np.ndarray
    dq: np.ndarray
    integral: np.ndarray

    @classmethod
    def at_rest(cls, q0, n) -> "SimState":
        return cls(t=0.0, q=np.asarray(q0, dtype=float).copy(),
                   dq=np.zeros(n), integral=np.zeros(n))


def controller_output(params: ControllerParams, q_ref, dq_ref, state: SimState):
    """Commanded current for the current state and reference."""
    e = np.asarray(q_ref) - state.q
    de = np.asarray(dq_ref) - state.dq
    raw = params.kp * e + params.kd * de + state.integral
    return np.clip(raw, -params.saturation, params.saturation)


@dataclass(frozen=True)
class Reference:
    """Sampled reference trajectory plus scheduled external torque."""

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    tau_ext: np.ndarray
    q0: np.ndarray
    dq0: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size


def simulate_trajectory(reference: Reference, plant: Plant, config: SimConfig,
                        rng=None) -> Trajectory:
    """Run the closed loop over a reference and log every sample.

    The sample at step k records the state, controller output and stiction
    resolution at time t_k, before integrating to t_{k+1}. Velocities of held
    joints are pinned to exactly zero.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = plant.n_joints
    arm = plant.arm
    ctrl = plant.controller
    friction = plant.friction
    dt = config.dt
    steps = len(reference)

    state = SimState.at_rest(reference.q0, n)
    if reference.dq0 is not None:
        state.dq = np.asarray(reference.dq0, dtype=float).copy()
    log = {name: np.zeros((steps, n)) for name in
           ("q", "dq", "ddq", "i_cmd", "i_meas", "tau_ext")}
    stuck_log = np.zeros((steps, n), dtype=bool)

    for k in range(steps):
        q_ref = reference.q[k]
        dq_ref = reference.dq[k]
        tau_ext = reference.tau_ext[k]
        e = q_ref - state.q
        state.integral = np.clip(
            state.integral + ctrl.ki * e * dt, -ctrl.windup_limit, ctrl.windup_limit
        )
        i_cmd = controller_output(ctrl, q_ref, dq_ref, state)
        i_meas = i_cmd + rng.normal(0.0, config.current_noise_std, n)
        tau_dist = rng.normal(0.0, config.disturbance_std, n)
        drive = arm.motor.current_gain * i_cmd + tau_ext + tau_dist
        ddq, _, stuck, dq_pinned = resolve_accelerations(
            state.q, state.dq, drive, arm, friction, band=config.velocity_band
        )
        state.dq = dq_pinned

        log["q"][k] = state.q
        log["dq"][k] = state.dq
        log["ddq"][k] = ddq
        log["i_cmd"][k] = i_cmd
        log["i_meas"][k] = i_meas
        log["tau_ext"][k] = tau_ext
        stuck_log[k] = stuck

        state.dq = state.dq + ddq * dt
        state.q = state.q + state.dq * dt
        state.t += dt
        if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.dq))):
            raise NonFiniteStateError(
                f"state diverged at t={state.t:.3f}s (step {k})"
            )

    ddq_logged = log["ddq"]
    if config.differenced_acceleration:
        ddq_logged = np.gradient(log["dq"], reference.t, axis=0)

    return Trajectory(
        t=reference.t.copy(),
        q=log["q"],
        dq=log["dq"],
        ddq=ddq_logged,
        q_ref=reference.q.copy(),
        dq_ref=reference.dq.copy(),
        i_cmd=log["i_cmd"],
        i_meas=log["i_meas"],
        tau_ext=log["tau_ext"],
        stuck=stuck_log,
        metadata=dict(reference.metadata),
    )


# -- reference construction ----------------------------------------------


def _minjerk(p0, p1, duration, t):
    """Minimum-jerk interpolation between p0 and p1, with velocity."""
    tau = np.clip(t / duration, 0.0, 1.0)
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    ds = (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / duration
    delta = p1 - p0
    return p0 + np.outer(s, delta), np.outer(ds, delta)


def segment_reference(poses, move_time, dwell_time, dt, lead_dwell=None,
                      metadata=None) -> Reference:
    """Reference visiting ``poses`` in order with min-jerk moves and dwells.

    ``dwell_time`` is either one duration for every dwell or a sequence with
    one duration per pose.
    """
    poses = [np.asarray(p, dtype=float) for p in poses]
    n = poses[0].size
    dwells = (list(dwell_time) if np.ndim(dwell_time) == 1
              else [float(dwell_time)] * len(poses))
    if len(dwells) != len(poses):
        raise ValueError("need one dwell duration per pose")
    if lead_dwell is None:
        lead_dwell = dwells[0]
    q_parts, dq_parts = [], []
    k0 = max(1, int(round(lead_dwell / dt)))
    q_parts.append(np.tile(poses[0], (k0, 1)))
    dq_parts.append(np.zeros((k0, n)))
    for prev, nxt, dwell in zip(poses[:-1], poses[1:], dwells[1:]):
        km = max(1, int(round(move_time / dt)))
        tm = (np.arange(km) + 1) * dt
        qm, dqm = _minjerk(prev, nxt, move_time, tm)
        q_parts.append(qm)
        dq_parts.append(dqm)
        kd = max(1, int(round(dwell / dt)))
        q_parts.append(np.tile(nxt, (kd, 1)))
        dq_parts.append(np.zeros((kd, n)))
    q = np.vstack(q_parts)
    dq = np.vstack(dq_parts)
    t = np.arange(len(q)) * dt
    return Reference(t=t, q=q, dq=dq, tau_ext=np.zeros_like(q), q0=poses[0],
                     metadata=metadata or {})


def random_waypoint_reference(arm: PlanarTwoLinkArm, rng, moves=2,
                              move_time=1.2, dwell_time=0.8, dt=8e-3,
                              radial_range=(0.35, 0.92),
                              angle_range=(-1.2, 2.3), elbow="up") -> Reference:
    """Visit random reachable Cartesian points inside an annular sector.

    ``dwell_time`` may be a single value or a ``[lo, hi]`` range sampled per
    dwell, which varies how far the integral action winds up at rest.
    """
    lo, hi = radial_range
    poses = []
    for _ in range(moves + 1):
        r = rng.uniform(lo, hi) * arm.reach
        theta = rng.uniform(*angle_range)
        target = (r * math.cos(theta), r * math.sin(theta))
        poses.append(arm.inverse_kinematics(target, elbow=elbow))
    if np.ndim(dwell_time) == 1:
        d_lo, d_hi = dwell_time
        dwells = rng.uniform(d_lo, d_hi, size=moves + 1).tolist()
    else:
        dwells = [float(dwell_time)] * (moves + 1)
    meta = {"scenario": "random-waypoints", "poses": [p.tolist() for p in poses]}
    return segment_reference(poses, move_time, dwells, dt, metadata=meta)


def circle_reference(arm: PlanarTwoLinkArm, center=(0.55, 0.0), radius=0.3,
                     speed=0.03, duration=20.0, hold_time=0.0, dt=8e-3,
                     elbow="up") -> Reference:
    """Track a Cartesian circle at constant tool speed, then optionally hold.

    Joint references come from the analytic inverse kinematics; reference
    velocities are centered finite differences of the joint path.
    """
    omega = speed / radius
    steps = max(2, int(round(duration / dt)))
    t = np.arange(steps) * dt
    cx, cy = center
    points = np.stack(
        [cx + radius * np.cos(omega * t), cy + radius * np.sin(omega * t)], axis=1
    )
    q = np.stack([arm.inverse_kinematics(p, elbow=elbow) for p in points])
    if hold_time > 0:
        kh = int(round(hold_time / dt))
        q = np.vstack([q, np.tile(q[-1], (kh, 1))])
        t = np.arange(len(q)) * dt
    dq = np.gradient(q, t, axis=0)
    meta = {"scenario": "circle-track", "center": list(center), "radius": radius,
            "speed": speed}
    return Reference(t=t, q=q, dq=dq, tau_ext=np.zeros_like(q), q0=q[0],
                     metadata=meta)


def rest_move_cycle_reference(poses=(math.pi / 2, 2.09, math.pi / 2, 0.52),
                              joint=0, other_pose=0.0, rest_time=2.5,
                              move_time=1.5, dt=8e-3, n_joints=2) -> Reference:
    """Alternate rest and move phases of a single joint through fixed poses."""
    full = []
    for p in poses:
        pose = np.full(n_joints, other_pose, dtype=float)
        pose[joint] = p
        full.append(pose)
    meta = {"scenario": "rest-move-cycle", "joint": joint,
            "poses": [float(p) for p in poses], "rest_time": rest_time,
            "move_time": move_time}
    return segment_reference(full, move_time, rest_time, dt, lead_dwell=rest_time,
                             metadata=meta)


def add_collision_pulses(reference: Reference, schedule) -> Reference:
    """Overlay raised-cosine external-torque pulses on a reference.

    ``schedule`` is an iterable of mappings with keys ``joint``, ``start``,
    ``duration`` and ``amplitude``. Ground-truth intervals are recorded in the
    reference metadata.
    """
    tau_ext = reference.tau_ext.copy()
    intervals = []
    for pulse in schedule:
        joint = int(pulse["joint"])
        start = float(pulse["start"])
        duration = float(pulse["duration"])
        amplitude = float(pulse["amplitude"])
        mask = (reference.t >= start) & (reference.t <= start + duration)
        phase = (reference.t[mask] - start) / duration
        tau_ext[mask, joint] += amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * phase))
        intervals.append({"joint": joint, "start": start,
                          "end": start + duration, "amplitude": amplitude})
    metadata = dict(reference.metadata)
    metadata["collision_intervals"] = intervals
    return replace(reference, tau_ext=tau_ext, metadata=metadata)


# -- dataset generation ----------------------------------------------------


def _reference_for(scenario: dict, arm: PlanarTwoLinkArm, dt: float, rng):
    kind = scenario.get("kind")
    opts = {k: v for k, v in scenario.items() if k not in ("kind", "count")}
    if kind == "random-waypoints":
        return random_waypoint_reference(arm, rng, dt=dt, **opts)
    if kind == "circle-track":
        return circle_reference(arm, dt=dt, **opts)
    if kind == "rest-move-cycle":
        return rest_move_cycle_reference(dt=dt, n_joints=arm.n_joints, **opts)
    if kind == "collision-episodes":
        base = _reference_for(opts.pop("base"), arm, dt, rng)
        return add_collision_pulses(base, opts.pop("schedule"))
    raise ValueError(f"unknown scenario kind {kind!r}; expected one of "
                     f"{SCENARIO_KINDS}")


def generate_dataset(scenario: dict, seed=None, plant: Plant | None = None,
                     config: SimConfig | None = None) -> list[Trajectory]:
    """Simulate ``scenario['count']`` trajectories (default 1) of a scenario.

    Deterministic for a given (scenario, seed, plant, config): every
    trajectory draws from its own child stream of the seed, so trajectories
    can be generated in parallel without changing the output.
    """
    plant = plant or Plant.default()
    config = config or SimConfig()
    if seed is None:
        seed = config.seed
    count = int(scenario.get("count", 1))
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for index, child in enumerate(children):
        rng = np.random.default_rng(child)
        reference = _reference_for(scenario, plant.arm, config.dt, rng)
        traj = simulate_trajectory(reference, plant, config, rng)
        traj.metadata.update({"seed": int(seed), "index": index,
                              "dt": config.dt,
                              "current_noise_std": config.current_noise_std,
                              "disturbance_std": config.disturbance_std})
        out.append(traj)
    return out
