"""Traversability maps, thresholded costmaps and their file formats.

Costmaps are written as a binary PGM (P5) plus a YAML sidecar in the usual
map-server layout: row 0 of the image is the top (largest y) of the grid,
free cells are 254, occupied 0 and unknown 205.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import DataError
from .geometry import PointCloud
from .hypersphere import Hypersphere
from .voxel import GridConfig

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

PGM_FREE = 254
PGM_OCCUPIED = 0
PGM_UNKNOWN = 205


@dataclass
class TraversabilityMap:
    scores: np.ndarray  # (H, W) in [0, 1]; NaN where unknown
    unknown: np.ndarray  # (H, W) bool
    grid: GridConfig
    origin_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.scores = np.where(self.unknown, np.nan, self.scores)


@dataclass
class Costmap:
    cells: np.ndarray  # (H, W) of FREE/OCCUPIED/UNKNOWN
    grid: GridConfig
    threshold: float = 0.5
    origin_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)


def infer_map(model, cloud: PointCloud, grid: GridConfig | None = None,
              anomaly_override: bool = False) -> TraversabilityMap:
    """Regression scores per occupied cell.

    With ``anomaly_override`` cells outside the hypersphere are forced to 0.
    """
    grid = grid or model.grid
    scores = np.zeros(grid.shape)
    unknown = np.ones(grid.shape, dtype=bool)
    if len(cloud):
        pred = model.predict_clouds([cloud], grid)[0]
        t = pred.t.copy()
        if anomaly_override:
            sphere: Hypersphere = model.sphere
            t[sphere.distances(pred.z) > sphere.radius] = 0.0
        scores.reshape(-1)[pred.cells] = t
        unknown.reshape(-1)[pred.cells] = False
    return TraversabilityMap(scores, unknown, grid)


def to_costmap(tmap: TraversabilityMap, threshold: float = 0.5) -> Costmap:
    """``score >= threshold`` is free, below is occupied, unknown stays unknown."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    cells = np.full(tmap.scores.shape, UNKNOWN, dtype=np.int8)
    known = ~tmap.unknown
    s = np.where(known, tmap.scores, 0.0)
    cells[known & (s >= threshold)] = FREE
    cells[known & (s < threshold)] = OCCUPIED
    return Costmap(cells, tmap.grid, threshold, tmap.origin_pose)


# --- CSV float grid ---------------------------------------------------------

def write_map_csv(tmap: TraversabilityMap, path: str | Path) -> None:
    """Three header lines (dims, resolution, origin) then one row per grid row.

    Unknown cells are written as ``nan``; values use repr for exact round-trip.
    """
    g = tmap.grid
    lines = [
        f"# dims {g.height_cells} {g.width_cells}",
        f"# resolution {g.resolution!r}",
        f"# origin {g.origin[0]!r} {g.origin[1]!r} {tmap.origin_pose[2]!r}",
    ]
    for row in tmap.scores:
        lines.append(",".join("nan" if np.isnan(v) else repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_map_csv(path: str | Path, max_points: int = 32) -> TraversabilityMap:
    try:
        lines = Path(path).read_text().splitlines()
        h, w = (int(v) for v in lines[0].split()[2:4])
        res = float(lines[1].split()[2])
        ox, oy, yaw = (float(v) for v in lines[2].split()[2:5])
        scores = np.array([[float(v) for v in ln.split(",")] for ln in lines[3:3 + h]])
    except (OSError, IndexError, ValueError) as exc:
        raise DataError(f"cannot parse map CSV {path}: {exc}") from exc
    if scores.shape != (h, w):
        raise DataError(f"{path}: expected {h}x{w} values, got {scores.shape}")
    grid = GridConfig(h, w, res, (ox, oy), max_points)
    return TraversabilityMap(scores, np.isnan(scores), grid, (ox, oy, yaw))


# --- PGM + YAML costmap -----------------------------------------------------

def write_costmap(costmap: Costmap, pgm_path: str | Path, yaml_path: str | Path | None = None) -> Path:
    pgm_path = Path(pgm_path)
    yaml_path = Path(yaml_path) if yaml_path else pgm_path.with_suffix(".yaml")
    lut = np.array([PGM_FREE, PGM_OCCUPIED, PGM_UNKNOWN], dtype=np.uint8)
    img = lut[costmap.cells][::-1]  # image row 0 = top of the map
    h, w = img.shape
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
    g = costmap.grid
    meta = {
        "image": pgm_path.name,
        "resolution": float(g.resolution),
        "origin": [float(g.origin[0]), float(g.origin[1]), float(costmap.origin_pose[2])],
        "negate": 0,
        "occupied_thresh": 0.65,
        "free_thresh": 0.196,
        "mode": "trinary",
        "traversability_threshold": float(costmap.threshold),
    }
    yaml_path.write_text(yaml.safe_dump(meta, sort_keys=True))
    return yaml_path


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PGM not supported")
    data = raw[pos + 1: pos + 1 + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: truncated image")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def read_costmap(yaml_path: str | Path, max_points: int = 32) -> Costmap:
    yaml_path = Path(yaml_path)
    try:
        meta = yaml.safe_load(yaml_path.read_text())
        img = _read_pgm(yaml_path.parent / meta["image"])
    except (OSError, KeyError, yaml.YAMLError) as exc:
        raise DataError(f"cannot read costmap {yaml_path}: {exc}") from exc
    img = img[::-1]
    cells = np.full(img.shape, UNKNOWN, dtype=np.int8)
    cells[img == PGM_FREE] = FREE
    cells[img == PGM_OCCUPIED] = OCCUPIED
    h, w = img.shape
    ox, oy, yaw = meta["origin"]
    grid = GridConfig(h, w, float(meta["resolution"]), (ox, oy), max_points)
    return Costmap(cells, grid, float(meta.get("traversability_threshold", 0.5)), (ox, oy, yaw))
