"""Trajectory records and their CSV/JSON on-disk format.

A trajectory CSV has one row per sample and the fixed column order

    t, q*, dq*, ddq*, qref*, dqref*, eq*, deq*, ic*, i*, tauext*, stuck*

where ``*`` runs over joints (1-based suffixes) and the header row is
mandatory. Floats are written with ``%.17g`` so files round-trip exactly and
hash deterministically. Each CSV is accompanied by a ``<stem>.meta.json``
sidecar holding the scenario description, seed and parameters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_GROUPS = ("q", "dq", "ddq", "qref", "dqref", "eq", "deq", "ic", "i", "tauext",
           "stuck")


@dataclass(frozen=True)
class JointSample:
    """One timestamped record of joint state, controller state and currents."""

    t: float
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    q_ref: np.ndarray
    dq_ref: np.ndarray
    i_cmd: np.ndarray
    i_meas: np.ndarray
    tau_ext: np.ndarray
    stuck: np.ndarray

    @property
    def e_q(self) -> np.ndarray:
        return self.q_ref - self.q

    @property
    def de_q(self) -> np.ndarray:
        return self.dq_ref - self.dq

    @property
    def n_joints(self) -> int:
        return self.q.size


@dataclass
class Trajectory:
    """Columnar store of one simulated trajectory."""

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    q_ref: np.ndarray
    dq_ref: np.ndarray
    i_cmd: np.ndarray
    i_meas: np.ndarray
    tau_ext: np.ndarray
    stuck: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    @property
    def n_joints(self) -> int:
        return self.q.shape[1]

    @property
    def e_q(self) -> np.ndarray:
        return self.q_ref - self.q

    @property
    def de_q(self) -> np.ndarray:
        return self.dq_ref - self.dq

    def sample(self, k: int) -> JointSample:
        return JointSample(
            t=float(self.t[k]),
            q=self.q[k].copy(),
            dq=self.dq[k].copy(),
            ddq=self.ddq[k].copy(),
            q_ref=self.q_ref[k].copy(),
            dq_ref=self.dq_ref[k].copy(),
            i_cmd=self.i_cmd[k].copy(),
            i_meas=self.i_meas[k].copy(),
            tau_ext=self.tau_ext[k].copy(),
            stuck=self.stuck[k].copy(),
        )

    # -- persistence --------------------------------------------------------

    def column_names(self) -> list[str]:
        names = ["t"]
        for group in _GROUPS:
            names.extend(f"{group}{j + 1}" for j in range(self.n_joints))
        return names

    def write_csv(self, path) -> Path:
        path = Path(path)
        n = self.n_joints
        columns = [self.t[:, None], self.q, self.dq, self.ddq, self.q_ref,
                   self.dq_ref, self.e_q, self.de_q, self.i_cmd, self.i_meas,
                   self.tau_ext]
        table = np.hstack(columns)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names())
            for k in range(len(self)):
                row = [f"{v:.17g}" for v in table[k]]
                row.extend(str(int(s)) for s in self.stuck[k])
                writer.writerow(row)
        meta_path = metadata_path(path)
        meta_path.write_text(
            json.dumps(self.metadata, sort_keys=True, indent=2) + "\n"
        )
        return path

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader]
        n = (len(header) - 1) // len(_GROUPS)
        expected = ["t"]
        for group in _GROUPS:
            expected.extend(f"{group}{j + 1}" for j in range(n))
        if header != expected:
            raise ValueError(f"unexpected trajectory header in {path}")
        data = np.array(rows, dtype=float)
        blocks = {}
        offset = 1
        for group in _GROUPS:
            blocks[group] = data[:, offset:offset + n]
            offset += n
        meta_path = metadata_path(path)
        metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(
            t=data[:, 0],
            q=blocks["q"],
            dq=blocks["dq"],
            ddq=blocks["ddq"],
            q_ref=blocks["qref"],
            dq_ref=blocks["dqref"],
            i_cmd=blocks["ic"],
            i_meas=blocks["i"],
            tau_ext=blocks["tauext"],
            stuck=blocks["stuck"].astype(bool),
            metadata=metadata,
        )


def metadata_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def stack_trajectories(trajectories) -> Trajectory:
    """Concatenate trajectories into one record (timestamps kept as-is)."""
    trajs = list(trajectories)
    if not trajs:
        raise ValueError("no trajectories to stack")
    return Trajectory(
        t=np.concatenate([tr.t for tr in trajs]),
        q=np.vstack([tr.q for tr in trajs]),
        dq=np.vstack([tr.dq for tr in trajs]),
        ddq=np.vstack([tr.ddq for tr in trajs]),
        q_ref=np.vstack([tr.q_ref for tr in trajs]),
        dq_ref=np.vstack([tr.dq_ref for tr in trajs]),
        i_cmd=np.vstack([tr.i_cmd for tr in trajs]),
        i_meas=np.vstack([tr.i_meas for tr in trajs]),
        tau_ext=np.vstack([tr.tau_ext for tr in trajs]),
        stuck=np.vstack([tr.stuck for tr in trajs]),
        metadata={"stacked": len(trajs)},
    )
