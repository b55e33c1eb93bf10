"""BEV grid geometry and pillar voxelization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

FEATURE_NAMES = ("x_l", "y_l", "z", "x_c", "y_c", "z_c", "sigma_z")


@dataclass(frozen=True)
class GridConfig:
    """Row index ``i`` runs along y, column index ``j`` along x.

    ``origin`` is the lower corner of cell (0, 0); cells are half-open.
    """

    height_cells: int = 80
    width_cells: int = 80
    resolution: float = 0.15
    origin: tuple[float, float] = (-6.0, -6.0)
    max_points: int = 32
    z_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.height_cells < 1 or self.width_cells < 1 or self.max_points < 1:
            raise ValueError("grid dimensions and max_points must be >= 1")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def centered(cls, size_x: float, size_y: float, resolution: float = 0.15,
                 max_points: int = 32) -> GridConfig:
        """Grid of the given metric size centered on the sensor."""
        w = int(round(size_x / resolution))
        h = int(round(size_y / resolution))
        return cls(h, w, resolution, (-w * resolution / 2, -h * resolution / 2), max_points)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)

    def cell_indices(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized ``cell_of``: returns (i, j, inside-mask)."""
        xy = np.asarray(xy, dtype=np.float64)[..., :2].reshape(-1, 2)
        i = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        j = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        inside = (i >= 0) & (i < self.height_cells) & (j >= 0) & (j < self.width_cells)
        return i, j, inside

    def cell_center(self, i, j) -> tuple[np.ndarray, np.ndarray]:
        cx = self.origin[0] + (np.asarray(j) + 0.5) * self.resolution
        cy = self.origin[1] + (np.asarray(i) + 0.5) * self.resolution
        return cx, cy


def cell_of(point, grid: GridConfig) -> tuple[int, int] | None:
    x, y = float(point[0]), float(point[1])
    i = math.floor((y - grid.origin[1]) / grid.resolution)
    j = math.floor((x - grid.origin[0]) / grid.resolution)
    if 0 <= i < grid.height_cells and 0 <= j < grid.width_cells:
        return (i, j)
    return None


@dataclass(frozen=True)
class PillarTensor:
    features: np.ndarray  # (H, W, M, 7)
    counts: np.ndarray  # (H, W)
    grid: GridConfig

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0

    def valid_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-padding rows and the flat cell id (``i * W + j``) of each.

        Rows come out grouped by cell in ascending cell id.
        """
        m = self.grid.max_points
        mask = np.arange(m) < self.counts[..., None]
        rows = self.features[mask]
        cell = np.repeat(np.arange(self.counts.size), self.counts.reshape(-1))
        return rows, cell


def voxelize(cloud: PointCloud, grid: GridConfig, seed: int = 0) -> PillarTensor:
    """Build the (H, W, M, 7) pillar tensor of a cloud.

    Pillar mean and sigma_z use every point that falls in the cell, even when
    only ``max_points`` of them are kept.  Rows are stored in a canonical
    (z, x, y) order so the result does not depend on input point order.
    """
    h, w, m = grid.height_cells, grid.width_cells, grid.max_points
    features = np.zeros((h, w, m, 7))
    counts = np.zeros((h, w), dtype=np.int64)
    pts = cloud.points
    if pts.shape[0] == 0:
        return PillarTensor(features, counts, grid)

    i, j, inside = grid.cell_indices(pts[:, :2])
    if grid.z_range is not None:
        inside &= (pts[:, 2] >= grid.z_range[0]) & (pts[:, 2] <= grid.z_range[1])
    pts, i, j = pts[inside], i[inside], j[inside]
    if pts.shape[0] == 0:
        return PillarTensor(features, counts, grid)

    cell = i * w + j
    order = np.lexsort((pts[:, 1], pts[:, 0], pts[:, 2], cell))
    pts, i, j, cell = pts[order], i[order], j[order], cell[order]
    n = pts.shape[0]

    ncell = h * w
    full = np.bincount(cell, minlength=ncell).astype(np.float64)
    mean = np.stack([np.bincount(cell, pts[:, k], minlength=ncell) for k in range(3)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean /= full[:, None]
    dz = pts[:, 2] - mean[cell, 2]
    var_z = np.bincount(cell, dz * dz, minlength=ncell)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma_z = np.sqrt(var_z / full)

    # rank within cell under canonical order
    starts = np.searchsorted(cell, cell, side="left")
    rank = np.arange(n) - starts
    keep = rank < m
    over = full[cell] > m
    if over.any():
        rng = np.random.default_rng(seed)
        key = rng.random(n)
        # order by (cell, random key) to pick a uniform subset per cell
        sub = np.lexsort((key, cell))
        sub_rank = np.empty(n, dtype=np.int64)
        sub_rank[sub] = np.arange(n) - np.searchsorted(cell[sub], cell[sub], side="left")
        keep = np.where(over, sub_rank < m, True)
        kept_idx = np.flatnonzero(keep)
        rank = np.empty(n, dtype=np.int64)
        kc = cell[kept_idx]
        rank[kept_idx] = np.arange(kept_idx.size) - np.searchsorted(kc, kc, side="left")

    sel = np.flatnonzero(keep)
    cx, cy = grid.cell_center(i[sel], j[sel])
    p = pts[sel]
    c = cell[sel]
    feat = np.empty((sel.size, 7))
    feat[:, 0] = p[:, 0] - cx
    feat[:, 1] = p[:, 1] - cy
    feat[:, 2] = p[:, 2]
    feat[:, 3:6] = p - mean[c]
    feat[:, 6] = sigma_z[c]
    features[i[sel], j[sel], rank[sel]] = feat
    counts.reshape(-1)[:] = np.minimum(full, m).astype(np.int64)
    return PillarTensor(features, counts, grid)
