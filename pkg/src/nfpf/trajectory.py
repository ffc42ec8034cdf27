"""Trajectory container and its text file format.

File layout::

    nfpf-traj v1 T D m d_env S dt seed
    t,y_0,...,y_{D-1},u_0,...,u_{m-1},s_0,...,s_{d_env-1}
    ...

Floats are written with 17 significant digits so reading back is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = ("nfpf-traj", "v1")


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


@dataclass
class Trajectory:
    """Observations y_t, controls u_t (applied after y_t) and optional true states."""

    observations: np.ndarray
    controls: np.ndarray
    true_states: np.ndarray | None = None
    dt: float = 1.0
    seed: int = 0
    image_size: int = 0

    def __post_init__(self):
        self.observations = _rows(self.observations)
        self.controls = _rows(self.controls)
        if self.true_states is not None:
            self.true_states = _rows(self.true_states)
        T = len(self.observations)
        if len(self.controls) != T or (self.true_states is not None and len(self.true_states) != T):
            raise DataError("observations, controls and true states must share length T")

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def control_dim(self) -> int:
        return self.controls.shape[1]

    @property
    def state_dim(self) -> int:
        return 0 if self.true_states is None else self.true_states.shape[1]

    def control_before(self, t: int) -> np.ndarray:
        """Control that drove the transition into step t (zero before step 0)."""
        return self.controls[t - 1] if t > 0 else np.zeros(self.control_dim)


def write_trajectory(path, traj: Trajectory) -> None:
    T, D, m, de = len(traj), traj.obs_dim, traj.control_dim, traj.state_dim
    header = " ".join(MAGIC + tuple(str(v) for v in (T, D, m, de, traj.image_size)) + (fmt(traj.dt), str(traj.seed)))
    lines = [header]
    for t in range(T):
        row = [str(t)]
        row += [fmt(v) for v in traj.observations[t]]
        row += [fmt(v) for v in traj.controls[t]]
        if de:
            row += [fmt(v) for v in traj.true_states[t]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc}") from None
    if not text:
        raise DataError(f"{path}: empty file")
    head = text[0].split()
    if tuple(head[:2]) != MAGIC or len(head) != 9:
        raise DataError(f"{path}: bad header {text[0]!r}")
    try:
        T, D, m, de, S = (int(v) for v in head[2:7])
        dt, seed = float(head[7]), int(head[8])
    except ValueError:
        raise DataError(f"{path}: bad header {text[0]!r}") from None
    rows = [ln for ln in text[1:] if ln.strip()]
    if len(rows) != T:
        raise DataError(f"{path}: header says T={T}, found {len(rows)} rows")
    width = 1 + D + m + de
    data = np.zeros((T, width))
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != width:
            raise DataError(f"{path}: row {i} has {len(parts)} columns, expected {width}")
        try:
            data[i] = [float(p) for p in parts]
        except ValueError:
            raise DataError(f"{path}: row {i} is not numeric") from None
    obs = data[:, 1 : 1 + D].reshape(T, D)
    ctrl = data[:, 1 + D : 1 + D + m].reshape(T, m)
    states = data[:, 1 + D + m :].reshape(T, de) if de else None
    return Trajectory(obs, ctrl, states, dt=dt, seed=seed, image_size=S)
