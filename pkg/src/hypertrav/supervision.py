"""Trajectory-derived traversability supervision."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, WindowOutOfRange
from .voxel import GridConfig

UNVISITED = -1.0


@dataclass(frozen=True)
class TrajectorySample:
    position: tuple[float, float]
    v_actual: tuple[float, float] = (0.0, 0.0)
    v_cmd: tuple[float, float] = (0.0, 0.0)
    time: float = 0.0


@dataclass(frozen=True)
class ScoreParams:
    eta: float = 2.0
    v_th: float = 0.25
    constant_tau: float | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.v_th < 0:
            raise ValueError("v_th must be >= 0")
        if self.constant_tau is not None and not 0 <= self.constant_tau <= 1:
            raise ValueError("constant_tau must lie in [0, 1]")


@dataclass(frozen=True)
class SupervisionWindow:
    positions: np.ndarray  # (K, 2)
    taus: np.ndarray  # (K,)
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "taus", np.asarray(self.taus, dtype=np.float64).reshape(-1))
        if self.positions.shape[0] != self.taus.shape[0]:
            raise ValueError("positions and taus differ in length")
        if np.any((self.taus < 0) | (self.taus > 1)):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return self.taus.shape[0]

    def with_positions(self, positions: np.ndarray) -> SupervisionWindow:
        return SupervisionWindow(positions, self.taus, self.n)


@dataclass(frozen=True)
class SupervisionGrid:
    values: np.ndarray  # (H, W), -1 marks unvisited
    grid: GridConfig

    @property
    def positive(self) -> np.ndarray:
        return self.values != UNVISITED


def velocity_error(v_actual, v_cmd) -> float:
    dx = v_actual[0] - v_cmd[0]
    dy = v_actual[1] - v_cmd[1]
    return 0.5 * (dx * dx + dy * dy)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def traversability_score(v_actual, v_cmd, params: ScoreParams) -> float:
    if params.constant_tau is not None:
        return float(params.constant_tau)
    return _sigmoid(-params.eta * (velocity_error(v_actual, v_cmd) - params.v_th))


def build_window(trajectory: list[TrajectorySample], t_index: int, n: int,
                 params: ScoreParams) -> SupervisionWindow:
    """Scored positions for samples ``t_index .. t_index + n`` inclusive."""
    if t_index < 0 or n < 0 or t_index + n >= len(trajectory):
        raise WindowOutOfRange(
            f"window [{t_index}, {t_index + n}] exceeds trajectory of length {len(trajectory)}")
    samples = trajectory[t_index: t_index + n + 1]
    positions = np.array([s.position for s in samples], dtype=np.float64)
    taus = np.array([traversability_score(s.v_actual, s.v_cmd, params) for s in samples])
    return SupervisionWindow(positions, taus, n)


def rasterize(window: SupervisionWindow, grid: GridConfig) -> SupervisionGrid:
    values = np.full(grid.shape, UNVISITED)
    if len(window) == 0:
        return SupervisionGrid(values, grid)
    i, j, inside = grid.cell_indices(window.positions)
    flat = (i * grid.width_cells + j)[inside]
    ncell = grid.height_cells * grid.width_cells
    hits = np.bincount(flat, minlength=ncell)
    sums = np.bincount(flat, window.taus[inside], minlength=ncell)
    visited = hits > 0
    flat_values = values.reshape(-1)
    flat_values[visited] = sums[visited] / hits[visited]
    return SupervisionGrid(values, grid)


# --- trajectory CSV ---------------------------------------------------------

TRAJ_COLUMNS = ("time", "x", "y", "vx", "vy", "vcx", "vcy")


def write_trajectory_csv(trajectory: list[TrajectorySample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJ_COLUMNS)
        for s in trajectory:
            writer.writerow([repr(float(v)) for v in (s.time, *s.position, *s.v_actual, *s.v_cmd)])


def read_trajectory_csv(path: str | Path) -> tuple[list[TrajectorySample], bool]:
    """Load a trajectory; the flag is False when velocity columns are absent.

    Without velocities the caller should score in constant-tau mode.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = set(reader.fieldnames or ())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for col in ("time", "x", "y"):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")
    has_vel = all(c in header for c in ("vx", "vy", "vcx", "vcy"))
    out = []
    try:
        for r in rows:
            va = (float(r["vx"]), float(r["vy"])) if has_vel else (0.0, 0.0)
            vc = (float(r["vcx"]), float(r["vcy"])) if has_vel else (0.0, 0.0)
            out.append(TrajectorySample((float(r["x"]), float(r["y"])), va, vc, float(r["time"])))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad row: {exc}") from exc
    times = [s.time for s in out]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DataError(f"{path}: times must be strictly increasing")
    return out, has_vel
