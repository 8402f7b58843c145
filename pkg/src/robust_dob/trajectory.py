"""Uniformly sampled closed-loop time series and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIGNALS = ("z", "x", "zbar", "q", "p", "y", "u", "w")


@dataclass
class Trajectory:
    """Recorded samples; every signal is an array of shape (samples, width).

    For a nominal-loop run ``z`` holds the nominal internal state, ``x`` the
    nominal x-block, ``u`` the nominal input and the controller signals have
    width zero.
    """

    times: np.ndarray
    z: np.ndarray
    x: np.ndarray
    zbar: np.ndarray
    q: np.ndarray
    p: np.ndarray
    y: np.ndarray
    u: np.ndarray
    w: np.ndarray
    step: float
    record_stride: int
    aborted: bool = False
    reason: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def sample_interval(self) -> float:
        return self.step * self.record_stride

    def columns(self) -> list[str]:
        names = ["t"]
        for sig in SIGNALS:
            names += [f"{sig}_{k + 1}" for k in range(getattr(self, sig).shape[1])]
        return names

    def table(self) -> np.ndarray:
        return np.column_stack([self.times] + [getattr(self, sig) for sig in SIGNALS])

    def window(self, t_start: float, t_stop: float | None = None) -> np.ndarray:
        """Boolean mask of the samples with t_start <= t <= t_stop."""
        eps = 1e-9 * max(1.0, abs(float(self.times[-1]))) if len(self.times) else 0.0
        mask = self.times >= t_start - eps
        if t_stop is not None:
            mask &= self.times <= t_stop + eps
        return mask


def write_csv(traj: Trajectory, path) -> Path:
    """Write one row per sample with shortest round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(traj.columns())
        for row in traj.table():
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_csv(path, step: float | None = None, record_stride: int = 1) -> Trajectory:
    """Inverse of :func:`write_csv` (metadata other than the signals is not stored)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    sigs = {}
    for sig in SIGNALS:
        idx = [k for k, name in enumerate(header) if name.rsplit("_", 1)[0] == sig]
        sigs[sig] = data[:, idx]
    times = data[:, 0]
    if step is None:
        step = float(times[1] - times[0]) / record_stride if len(times) > 1 else 0.0
    return Trajectory(times=times, step=step, record_stride=record_stride, **sigs)
