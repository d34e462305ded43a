"""Residual-based collision detection on top of the current models.

The monitoring signal is the per-joint difference between measured and
predicted current, optionally smoothed by a first-order low-pass. Per-joint
thresholds are calibrated as a margin times an empirical quantile of the
collision-free signal magnitude; a sample is flagged when any joint meets or
exceeds its threshold, and flagged runs are segmented into events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .features import augmented_features
from .trajectory import Trajectory


@dataclass
class MonitoringSignal:
    """Per-joint residual time series aligned with its source trajectory."""

    t: np.ndarray
    values: np.ndarray
    filter_tau: float = 0.0
    dq: np.ndarray | None = None

    def __len__(self) -> int:
        return self.t.size

    @property
    def n_joints(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ThresholdConfig:
    """Calibrated per-joint detection thresholds and the rule that made them."""

    thresholds: np.ndarray
    quantile: float = 0.9999
    margin: float = 1.2
    filter_tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "thresholds", np.atleast_1d(np.asarray(self.thresholds, float))
        )
        if np.any(self.thresholds <= 0):
            raise ValueError("thresholds must be positive")

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(),
                "quantile": self.quantile, "margin": self.margin,
                "filter_tau": self.filter_tau}

    @classmethod
    def from_dict(cls, payload: dict) -> "ThresholdConfig":
        return cls(thresholds=np.asarray(payload["thresholds"], float),
                   quantile=payload["quantile"], margin=payload["margin"],
                   filter_tau=payload["filter_tau"])


@dataclass(frozen=True)
class DetectionEvent:
    """Contiguous interval where the monitoring signal exceeded a threshold."""

    start: float
    end: float
    joints: tuple
    peaks: np.ndarray
    latency: float | None = None

    def to_dict(self) -> dict:
        payload = {"start": self.start, "end": self.end,
                   "joints": list(self.joints),
                   "peaks": [float(p) for p in self.peaks]}
        if self.latency is not None:
            payload["latency"] = self.latency
        return payload


def lowpass(values, t, tau) -> np.ndarray:
    """First-order exponential smoothing with time constant ``tau`` seconds.

    Discretized so a step input reaches ``1 - exp(-t/tau)`` of its height
    after ``t`` seconds; ``tau = 0`` disables filtering.
    """
    values = np.asarray(values, dtype=float)
    if tau <= 0:
        return values.copy()
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    decay = math.exp(-dt / tau)
    return lfilter([1.0 - decay], [1.0, -decay], values, axis=0)


def residual_signal(t, i_meas, i_hat, filter_tau=0.0, dq=None) -> MonitoringSignal:
    """Monitoring signal from measured and predicted currents."""
    t = np.asarray(t, dtype=float)
    raw = np.asarray(i_meas, dtype=float) - np.asarray(i_hat, dtype=float)
    return MonitoringSignal(t=t, values=lowpass(raw, t, filter_tau),
                            filter_tau=filter_tau, dq=dq)


def monitoring_signal(estimators, trajectory: Trajectory,
                      filter_tau=0.0) -> MonitoringSignal:
    """Monitoring signal of a trajectory under per-joint estimators.

    ``estimators`` maps joint order to fitted current models (one per joint,
    in joint order).
    """
    x = augmented_features(trajectory)
    i_hat = np.column_stack([est.predict(x) for est in estimators])
    return residual_signal(trajectory.t, trajectory.i_meas, i_hat,
                           filter_tau=filter_tau, dq=trajectory.dq)


def predicted_currents(estimators, trajectory: Trajectory) -> np.ndarray:
    x = augmented_features(trajectory)
    return np.column_stack([est.predict(x) for est in estimators])


def calibrate_threshold(signals, quantile=0.9999, margin=1.2) -> ThresholdConfig:
    """Per-joint thresholds from collision-free monitoring signals.

    Each threshold is ``margin`` times the empirical ``quantile`` of the
    absolute signal pooled over the calibration runs. Deterministic; raises
    on an empty calibration set.
    """
    signals = [signals] if isinstance(signals, MonitoringSignal) else list(signals)
    if not signals:
        raise ValueError("calibration needs at least one collision-free signal")
    stacked = np.vstack([np.abs(sig.values) for sig in signals])
    if stacked.size == 0:
        raise ValueError("calibration signals are empty")
    thresholds = margin * np.quantile(stacked, quantile, axis=0)
    return ThresholdConfig(thresholds=thresholds, quantile=quantile,
                           margin=margin, filter_tau=signals[0].filter_tau)


def exceedances(signal: MonitoringSignal, config: ThresholdConfig) -> np.ndarray:
    """Boolean (N, n) matrix of per-joint threshold crossings (inclusive)."""
    if signal.n_joints != config.thresholds.size:
        raise ValueError("threshold count does not match the signal joints")
    return np.abs(signal.values) >= config.thresholds


def detect(signal: MonitoringSignal, config: ThresholdConfig) -> np.ndarray:
    """Per-sample collision flags: any joint at or above its threshold."""
    return exceedances(signal, config).any(axis=1)


def _runs(flags) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True entries."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return []
    padded = np.concatenate([[False], flags, [False]]).astype(int)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts, stops))


def segment_events(signal: MonitoringSignal, config: ThresholdConfig,
                   min_duration=0.024, merge_gap=0.08,
                   ground_truth=None) -> list[DetectionEvent]:
    """Segment flagged samples into detection events.

    Runs separated by less than ``merge_gap`` seconds fuse into one event and
    events shorter than ``min_duration`` seconds are dropped. When
    ``ground_truth`` intervals (dicts with ``start``/``end``) are given, each
    event overlapping one gets the detection latency relative to that
    interval's start.
    """
    t = signal.t
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    per_joint = exceedances(signal, config)
    runs = _runs(per_joint.any(axis=1))
    merged = []
    for start, stop in runs:
        if merged and t[start] - t[merged[-1][1] - 1] < merge_gap:
            merged[-1] = (merged[-1][0], stop)
        else:
            merged.append((start, stop))
    events = []
    for start, stop in merged:
        if t[stop - 1] - t[start] + (t[1] - t[0] if t.size > 1 else 0.0) \
                < min_duration:
            continue
        window = slice(start, stop)
        joints = tuple(int(j) for j in
                       np.flatnonzero(per_joint[window].any(axis=0)))
        peaks = np.abs(signal.values[window]).max(axis=0)
        latency = None
        if ground_truth:
            for interval in ground_truth:
                if t[start] <= interval["end"] and t[stop - 1] >= interval["start"]:
                    latency = float(t[start] - interval["start"])
                    break
        events.append(DetectionEvent(start=float(t[start]),
                                     end=float(t[stop - 1]), joints=joints,
                                     peaks=peaks, latency=latency))
    return events


def write_events_jsonl(events, path) -> Path:
    """One JSON object per line, one line per event."""
    path = Path(path)
    lines = [json.dumps(event.to_dict(), sort_keys=True) for event in events]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path
