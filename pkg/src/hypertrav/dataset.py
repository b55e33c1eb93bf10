"""Synthetic datasets on disk: a JSON manifest, labeled scan PLYs and route CSVs.

A route is a world-frame trajectory. Each scan stores its pose on the route;
the loader moves the following ``window`` route samples into the scan frame
to build the supervision window, the same way logged data would be handled.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DataError, SpecError
from .geometry import PointCloud, read_cloud, write_gspc, write_ply
from .supervision import (ScoreParams, TrajectorySample, build_window, read_trajectory_csv,
                          write_trajectory_csv)
from .synth import (PROFILES, World, WorldSpec, extract_scan, generate_trajectory, generate_world,
                    heading_at, nearest_traversable, trajectory_to_frame)
from .trainer import Sample
from .voxel import GridConfig

MANIFEST = "dataset.json"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class RouteSpec:
    """Waypoints in world coordinates, snapped to the nearest traversable cell."""

    waypoints: tuple[tuple[float, float], ...]
    n_scans: int
    seed: int = 0


@dataclass(frozen=True)
class DatasetSpec:
    world: WorldSpec = field(default_factory=WorldSpec)
    profile: str = "wheeled"
    grid: GridConfig = field(default_factory=GridConfig)
    score: ScoreParams = field(default_factory=ScoreParams)
    window: int = 50  # route samples per supervision window
    stride: int = 4  # route samples between consecutive scans
    dt: float = 0.2
    train_routes: tuple[RouteSpec, ...] = ()
    test_routes: tuple[RouteSpec, ...] = ()

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise SpecError(f"unknown robot profile {self.profile!r}")
        if self.window < 1 or self.stride < 1:
            raise SpecError("window and stride must be positive")
        for r in self.train_routes + self.test_routes:
            if len(r.waypoints) < 2 or r.n_scans < 1:
                raise SpecError("a route needs two waypoints and at least one scan")


@dataclass
class ScanRecord:
    scan_id: str
    split: str
    route: str
    t_index: int
    pose: tuple[float, float, float]
    cloud: PointCloud


@dataclass
class Dataset:
    spec_dict: dict
    routes: dict[str, list[TrajectorySample]]
    scans: list[ScanRecord]
    grid: GridConfig
    score: ScoreParams
    window: int
    anomalous_ids: tuple[int, ...]

    def samples(self, split: str | None = None) -> list[Sample]:
        out = []
        for rec in self.scans:
            if split is not None and rec.split != split:
                continue
            route = self.routes[rec.route]
            local = trajectory_to_frame(route, rec.pose)
            n = min(self.window, len(route) - 1 - rec.t_index)
            if n < 1:
                raise DataError(f"scan {rec.scan_id}: no route samples after t={rec.t_index}")
            win = build_window(local, rec.t_index, n, self.score)
            out.append(Sample(rec.cloud, win, self.grid, rec.scan_id, self.anomalous_ids))
        return out


def _drive(world: World, spec: DatasetSpec, route: RouteSpec) -> list[TrajectorySample]:
    profile = PROFILES[spec.profile]
    pts = [nearest_traversable(world, profile, p) for p in route.waypoints]
    length = (route.n_scans - 1) * spec.stride + spec.window + 1
    return generate_trajectory(world, profile, length, seed=route.seed, start=pts[0],
                               goal=pts[-1], dt=spec.dt, via=tuple(pts[1:-1]))


def build_dataset(spec: DatasetSpec) -> tuple[Dataset, World]:
    world = generate_world(spec.world, spec.grid.resolution)
    routes: dict[str, list[TrajectorySample]] = {}
    scans: list[ScanRecord] = []
    for split, specs in (("train", spec.train_routes), ("test", spec.test_routes)):
        for r_idx, rspec in enumerate(specs):
            name = f"{split}{r_idx}"
            traj = _drive(world, spec, rspec)
            routes[name] = traj
            for k in range(rspec.n_scans):
                t = k * spec.stride
                pose = (traj[t].position[0], traj[t].position[1], heading_at(traj, t))
                scans.append(ScanRecord(f"{name}_{k:03d}", split, name, t, pose,
                                        extract_scan(world, pose, spec.grid)))
    ds = Dataset(spec_to_dict(spec), routes, scans, spec.grid, spec.score, spec.window,
                 PROFILES[spec.profile].anomalous_classes)
    return ds, world


def spec_to_dict(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    return json.loads(json.dumps(d))


# --- disk layout --------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir: str | Path, world: World | None = None) -> Path:
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    (out / "routes").mkdir(exist_ok=True)
    for name, traj in ds.routes.items():
        write_trajectory_csv(traj, out / "routes" / f"{name}.csv")
    entries = []
    for rec in ds.scans:
        rel = f"scans/{rec.scan_id}.ply"
        write_ply(rec.cloud, out / rel)
        entries.append({"id": rec.scan_id, "split": rec.split, "route": rec.route,
                        "t_index": rec.t_index, "pose": list(rec.pose), "cloud": rel})
    if world is not None:
        write_gspc(world.cloud, out / "world.gspc")
    g = ds.grid
    manifest = {
        "format_version": FORMAT_VERSION,
        "grid": {"height_cells": g.height_cells, "width_cells": g.width_cells,
                 "resolution": g.resolution, "origin": list(g.origin), "max_points": g.max_points},
        "score": asdict(ds.score),
        "window": ds.window,
        "anomalous_ids": list(ds.anomalous_ids),
        "routes": {name: f"routes/{name}.csv" for name in ds.routes},
        "scans": entries,
        "spec": ds.spec_dict,
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {root / MANIFEST}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset format {manifest.get('format_version')!r}")
    try:
        gd = manifest["grid"]
        grid = GridConfig(gd["height_cells"], gd["width_cells"], gd["resolution"],
                          tuple(gd["origin"]), gd["max_points"])
        score = ScoreParams(**manifest["score"])
        routes = {}
        for name, rel in manifest["routes"].items():
            traj, _ = read_trajectory_csv(root / rel)
            routes[name] = traj
        scans = [ScanRecord(e["id"], e["split"], e["route"], int(e["t_index"]),
                            tuple(float(v) for v in e["pose"]), read_cloud(root / e["cloud"]))
                 for e in manifest["scans"]]
        anomalous = tuple(int(v) for v in manifest["anomalous_ids"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest in {root}: {exc}") from exc
    for rec in scans:
        if rec.route not in routes:
            raise DataError(f"scan {rec.scan_id} refers to unknown route {rec.route!r}")
    return Dataset(manifest.get("spec", {}), routes, scans, grid, score,
                   int(manifest["window"]), anomalous)


def split_count(total: int, parts: int) -> list[int]:
    """Spread ``total`` scans over ``parts`` routes, earlier routes taking the remainder."""
    base, extra = divmod(total, parts)
    return [base + (k < extra) for k in range(parts)]


def default_routes(extent: tuple[float, float], n_train: int = 40, n_test: int = 12,
                   seed: int = 0) -> tuple[tuple[RouteSpec, ...], tuple[RouteSpec, ...]]:
    """Four training lanes along y and three test lanes crossing them along x.

    Test scans therefore see the terrain at headings never driven in training.
    """
    w, h = extent
    m = 6.0
    sx, sy = w - 2 * m, h - 2 * m
    xs = [m + sx * f for f in (1 / 18, 6 / 18, 11 / 18, 16 / 18)]
    ys = [m + sy * f for f in (7 / 36, 1 / 2, 29 / 36)]
    train = tuple(RouteSpec(((x, m), (x, h - m)), n, seed + k)
                  for k, (x, n) in enumerate(zip(xs, split_count(n_train, len(xs)))) if n)
    test = []
    for k, (y, n) in enumerate(zip(ys, split_count(n_test, len(ys)))):
        ends = ((m, y), (w - m, y)) if k % 2 == 0 else ((w - m, y), (m, y))
        if n:
            test.append(RouteSpec(ends, n, seed + 100 + k))
    return train, tuple(test)
