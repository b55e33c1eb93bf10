"""Seeded synthetic terrain, robot trajectories and scan extraction.

The world is a smooth heightfield (a global tilt plus mound-shaped slope
patches) covered by ground points, with rocks, low bushes, high bushes and
tree trunks scattered on it.  Every point carries its class id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import NoPathError, SpecError
from .evaluator import project_labels
from .geometry import PointCloud
from .supervision import TrajectorySample
from .voxel import GridConfig

GROUND = 0
ROCK = 1
LOW_BUSH = 2
HIGH_BUSH = 3
TREE = 4
CLASS_NAMES = {GROUND: "ground", ROCK: "rock", LOW_BUSH: "low_bush", HIGH_BUSH: "high_bush", TREE: "tree"}
LOW_BUSH_MAX = 0.6


@dataclass(frozen=True)
class SlopePatch:
    """Smooth mound whose flanks reach ``angle`` radians of slope."""

    center: tuple[float, float]
    radius: float
    angle: float

    @property
    def peak(self) -> float:
        # h(r) = H cos^2(pi r / 2R) has max slope H pi / (2R)
        return math.tan(self.angle) * 2.0 * self.radius / math.pi


@dataclass(frozen=True)
class Obstacle:
    kind: int
    center: tuple[float, float]
    radius: float
    height: float


@dataclass(frozen=True)
class WorldSpec:
    extent: tuple[float, float] = (48.0, 48.0)
    ground_noise: float = 0.01
    density: float = 150.0  # ground points per m^2
    tilt: float = 0.0  # global slope, radians
    tilt_direction: float = 0.0  # uphill heading, radians
    furrow_amplitude: float = 0.0  # sinusoidal ground ridges, meters
    furrow_period: float = 0.6
    furrow_direction: float = math.pi / 2  # heading the ridges run along, radians
    slopes: tuple[SlopePatch, ...] = ()
    n_slopes: int = 0
    n_rocks: int = 30
    n_low_bushes: int = 30
    n_high_bushes: int = 20
    n_trees: int = 15
    obstacles: tuple[Obstacle, ...] = ()
    corridors: tuple[tuple[tuple[float, float], ...], ...] = ()  # polylines kept clear
    corridor_width: float = 2.0
    obstacle_gap: float = 0.3  # minimum clearance between obstacle footprints
    seed: int = 0

    def __post_init__(self):
        if not self.density > 0:
            raise SpecError("density must be > 0")
        if min(self.extent) <= 0:
            raise SpecError("extent must be positive")
        if self.ground_noise < 0:
            raise SpecError("ground_noise must be >= 0")
        if self.furrow_amplitude < 0 or self.furrow_period <= 0:
            raise SpecError("furrow amplitude must be >= 0 and period > 0")
        if abs(self.tilt) > math.radians(25):
            raise SpecError("tilt must not exceed 25 degrees")
        for p in self.slopes:
            if not 0 <= p.angle <= math.radians(25):
                raise SpecError("slope patch angle must lie in [0, 25] degrees")
        for ob in self.obstacles:
            if not (ob.radius <= ob.center[0] <= self.extent[0] - ob.radius
                    and ob.radius <= ob.center[1] <= self.extent[1] - ob.radius):
                raise SpecError(f"obstacle footprint at {ob.center} leaves the extent")
        if self.corridor_width < 0:
            raise SpecError("corridor_width must be >= 0")
        for line in self.corridors:
            if len(line) < 2:
                raise SpecError("a corridor needs at least two points")
        counts = (self.n_slopes, self.n_rocks, self.n_low_bushes, self.n_high_bushes, self.n_trees)
        if min(counts) < 0:
            raise SpecError("obstacle counts must be >= 0")


@dataclass(frozen=True)
class RobotProfile:
    name: str = "wheeled"
    traversable: frozenset = frozenset({GROUND})
    nominal_speed: float = 1.0
    noise: dict = field(default_factory=lambda: {GROUND: 0.05})
    clearance: float = 0.45

    def __post_init__(self):
        if GROUND not in self.traversable:
            raise SpecError("ground must be traversable")

    @property
    def anomalous_classes(self) -> tuple[int, ...]:
        return tuple(sorted(set(CLASS_NAMES) - set(self.traversable)))

    def noise_for(self, cls: int) -> float:
        return float(self.noise.get(cls, self.noise.get(GROUND, 0.0)))


WHEELED = RobotProfile("wheeled", frozenset({GROUND}), 1.0, {GROUND: 0.05})
LEGGED = RobotProfile("legged", frozenset({GROUND, LOW_BUSH}), 0.8, {GROUND: 0.05, LOW_BUSH: 0.3})
PROFILES = {"wheeled": WHEELED, "legged": LEGGED}


@dataclass
class World:
    spec: WorldSpec
    cloud: PointCloud
    obstacles: tuple[Obstacle, ...]
    slopes: tuple[SlopePatch, ...]
    grid: GridConfig

    def height(self, x, y) -> np.ndarray:
        return terrain_height(self.spec, self.slopes, np.asarray(x, dtype=np.float64),
                              np.asarray(y, dtype=np.float64))

    def oracle(self, profile: RobotProfile = WHEELED) -> np.ndarray:
        return project_labels(self.cloud, profile.anomalous_classes, self.grid)

    def class_grid(self) -> np.ndarray:
        """Dominant non-ground class per cell (GROUND where none)."""
        out = np.zeros(self.grid.shape, dtype=np.int64)
        i, j, inside = self.grid.cell_indices(self.cloud.points)
        lab = self.cloud.labels
        for cls in (LOW_BUSH, HIGH_BUSH, ROCK, TREE):
            sel = inside & (lab == cls)
            out[i[sel], j[sel]] = cls
        return out


def terrain_height(spec: WorldSpec, slopes, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = (math.cos(spec.tilt_direction), math.sin(spec.tilt_direction))
    h = math.tan(spec.tilt) * (x * d[0] + y * d[1])
    if spec.furrow_amplitude > 0:
        across = -x * math.sin(spec.furrow_direction) + y * math.cos(spec.furrow_direction)
        h = h + spec.furrow_amplitude * np.sin(2 * math.pi * across / spec.furrow_period)
    for p in slopes:
        r = np.hypot(x - p.center[0], y - p.center[1])
        inside = r < p.radius
        h = h + np.where(inside, p.peak * np.cos(0.5 * math.pi * np.minimum(r / p.radius, 1.0)) ** 2, 0.0)
    return h


def _segment_distance(p: tuple[float, float], line) -> float:
    """Distance from ``p`` to a polyline."""
    pts = np.asarray(line, dtype=np.float64)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", np.asarray(p) - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-12), 0, 1)
    return float(np.min(np.linalg.norm(a + t[:, None] * ab - np.asarray(p), axis=1)))


def _place_obstacles(spec: WorldSpec, rng: np.random.Generator) -> tuple[Obstacle, ...]:
    found = list(spec.obstacles)
    half = 0.5 * spec.corridor_width
    plan = [
        (ROCK, spec.n_rocks, (0.3, 0.8), (0.3, 1.0)),
        (LOW_BUSH, spec.n_low_bushes, (0.3, 0.8), (0.2, 0.55)),
        (HIGH_BUSH, spec.n_high_bushes, (0.3, 0.8), (0.6, 1.5)),
        (TREE, spec.n_trees, (0.1, 0.25), (3.0, 6.0)),
    ]
    w, h = spec.extent
    centers = [o.center for o in found]
    radii = [o.radius for o in found]
    for kind, count, rad_rng, h_rng in plan:
        for _ in range(count):
            for _attempt in range(50):
                rad = rng.uniform(*rad_rng)
                c = (rng.uniform(rad, w - rad), rng.uniform(rad, h - rad))
                if any(_segment_distance(c, line) < rad + half for line in spec.corridors):
                    continue
                if centers:
                    gap = np.hypot(*(np.asarray(centers) - c).T) - np.asarray(radii)
                    if np.any(gap <= rad + spec.obstacle_gap):
                        continue
                found.append(Obstacle(kind, c, rad, rng.uniform(*h_rng)))
                centers.append(c)
                radii.append(rad)
                break
    return tuple(found)


def _disk(rng, center, radius, n) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * math.pi, n)
    return np.stack([center[0] + r * np.cos(a), center[1] + r * np.sin(a)], axis=1)


def generate_world(spec: WorldSpec, resolution: float = 0.15) -> World:
    rng = np.random.default_rng(spec.seed)
    w, h = spec.extent
    slopes = list(spec.slopes)
    for _ in range(spec.n_slopes):
        rad = rng.uniform(3.0, 6.0)
        slopes.append(SlopePatch((rng.uniform(0, w), rng.uniform(0, h)), rad,
                                 math.radians(rng.uniform(5.0, 20.0))))
    slopes = tuple(slopes)
    obstacles = _place_obstacles(spec, rng)

    def hgt(xy):
        return terrain_height(spec, slopes, xy[:, 0], xy[:, 1])

    n_ground = int(round(spec.density * w * h))
    gxy = rng.random((n_ground, 2)) * np.array([w, h])
    keep = np.ones(n_ground, dtype=bool)
    for ob in obstacles:
        if ob.kind in (ROCK, TREE):
            keep &= np.hypot(gxy[:, 0] - ob.center[0], gxy[:, 1] - ob.center[1]) > ob.radius
    gxy = gxy[keep]
    gz = hgt(gxy) + rng.normal(0.0, spec.ground_noise, gxy.shape[0])
    parts = [np.column_stack([gxy, gz])]
    labels = [np.full(gxy.shape[0], GROUND)]

    for ob in obstacles:
        area = math.pi * ob.radius ** 2
        base = float(hgt(np.array([ob.center]))[0])
        if ob.kind == ROCK:
            n = max(8, int(spec.density * area * 1.5))
            xy = _disk(rng, ob.center, ob.radius, n)
            rr = np.hypot(xy[:, 0] - ob.center[0], xy[:, 1] - ob.center[1]) / ob.radius
            z = base + ob.height * np.sqrt(np.clip(1 - rr ** 2, 0, 1)) + rng.normal(0, spec.ground_noise, n)
        elif ob.kind in (LOW_BUSH, HIGH_BUSH):
            n = max(8, int(spec.density * area * 2.0))
            xy = _disk(rng, ob.center, ob.radius, n)
            rr = np.hypot(xy[:, 0] - ob.center[0], xy[:, 1] - ob.center[1]) / ob.radius
            top = ob.height * (1 - 0.5 * rr ** 2)
            z = hgt(xy) + top * np.sqrt(rng.random(n))
            if ob.kind == LOW_BUSH:
                z = np.minimum(z, hgt(xy) + LOW_BUSH_MAX - 1e-3)
            else:
                # crown point so every high bush reaches its full height
                xy[0] = ob.center
                z[0] = base + ob.height
        else:
            n = max(16, int(spec.density * 2 * math.pi * ob.radius * ob.height * 0.5))
            a = rng.uniform(0, 2 * math.pi, n)
            xy = np.stack([ob.center[0] + ob.radius * np.cos(a), ob.center[1] + ob.radius * np.sin(a)], axis=1)
            z = base + rng.uniform(0, ob.height, n)
        parts.append(np.column_stack([xy, z]))
        labels.append(np.full(n, ob.kind))

    cloud = PointCloud(np.concatenate(parts), np.concatenate(labels))
    grid = GridConfig(int(math.ceil(h / resolution)), int(math.ceil(w / resolution)), resolution, (0.0, 0.0))
    return World(spec, cloud, obstacles, slopes, grid)


# --- trajectories -------------------------------------------------------------

def traversable_mask(world: World, profile: RobotProfile) -> np.ndarray:
    """Cells where the robot footprint (``clearance`` radius) avoids anomalies."""
    oracle = world.oracle(profile)
    blocked = oracle == 2
    dist = ndimage.distance_transform_edt(~blocked) * world.grid.resolution
    return (dist > profile.clearance) & (oracle != 0)


def _grid_path(free: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]]:
    """Shortest 8-connected path through free cells (Dijkstra)."""
    h, w = free.shape
    ii, jj = np.nonzero(free)
    src, dst, wts = [], [], []
    for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ti, tj = ii + di, jj + dj
        ok = (ti >= 0) & (ti < h) & (tj >= 0) & (tj < w)
        ok[ok] = free[ti[ok], tj[ok]]
        src.append(ii[ok] * w + jj[ok])
        dst.append(ti[ok] * w + tj[ok])
        wts.append(np.full(int(ok.sum()), math.hypot(di, dj)))
    r, c, wt = np.concatenate(src), np.concatenate(dst), np.concatenate(wts)
    graph = coo_matrix((np.r_[wt, wt], (np.r_[r, c], np.r_[c, r])), shape=(h * w, h * w)).tocsr()
    s, g = start[0] * w + start[1], goal[0] * w + goal[1]
    dist, pred = dijkstra(graph, indices=s, return_predecessors=True)
    if not np.isfinite(dist[g]):
        raise NoPathError(f"no traversable path from {start} to {goal}")
    path = [g]
    while path[-1] != s:
        path.append(pred[path[-1]])
    return [divmod(int(p), w) for p in reversed(path)]


def nearest_traversable(world: World, profile: RobotProfile, xy) -> tuple[float, float]:
    """Center of the traversable cell closest to ``xy``."""
    free = traversable_mask(world, profile)
    if not free.any():
        raise NoPathError("no traversable cells")
    g = world.grid
    _, (ii, jj) = ndimage.distance_transform_edt(~free, return_indices=True)
    i, j, _ = g.cell_indices(np.asarray(xy, dtype=np.float64))
    i = int(np.clip(i[0], 0, g.height_cells - 1))
    j = int(np.clip(j[0], 0, g.width_cells - 1))
    cx, cy = g.cell_center(ii[i, j], jj[i, j])
    return float(cx), float(cy)


def _resample(polyline: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    arc = np.r_[0.0, np.cumsum(seg)]
    s = np.arange(0.0, arc[-1], spacing)
    return np.column_stack([np.interp(s, arc, polyline[:, 0]), np.interp(s, arc, polyline[:, 1])])


def generate_trajectory(world: World, profile: RobotProfile, length: int, seed: int = 0,
                        start: tuple[float, float] | None = None,
                        goal: tuple[float, float] | None = None,
                        dt: float = 0.2,
                        via: tuple[tuple[float, float], ...] = ()) -> list[TrajectorySample]:
    """Plan a path over profile-traversable cells and drive it at nominal speed.

    The path visits ``via`` points in order between start and goal.
    Commanded velocity follows the path tangent; the actual velocity adds
    Gaussian noise whose scale depends on the terrain class underfoot.
    """
    rng = np.random.default_rng(seed)
    free = traversable_mask(world, profile)
    if not free.any():
        raise NoPathError("no traversable cells")
    g = world.grid

    def to_cell(p):
        i = int((p[1] - g.origin[1]) // g.resolution)
        j = int((p[0] - g.origin[0]) // g.resolution)
        if not (0 <= i < g.height_cells and 0 <= j < g.width_cells) or not free[i, j]:
            raise NoPathError(f"endpoint {p} is not on a traversable cell")
        return (i, j)

    cand = np.argwhere(free)
    s_cell = to_cell(start) if start is not None else tuple(cand[rng.integers(len(cand))])
    g_cell = to_cell(goal) if goal is not None else tuple(cand[rng.integers(len(cand))])
    stops = [s_cell] + [to_cell(p) for p in via] + [g_cell]
    path = [stops[0]]
    for a, b in zip(stops[:-1], stops[1:]):
        path.extend(_grid_path(free, a, b)[1:])
    cells = np.array(path, dtype=np.float64)
    cx, cy = g.cell_center(cells[:, 0], cells[:, 1])
    poly = np.column_stack([cx, cy])
    if poly.shape[0] > 5:
        smooth = ndimage.uniform_filter1d(poly, size=5, axis=0, mode="nearest")
        si, sj, _ = g.cell_indices(smooth)
        if free[np.clip(si, 0, g.height_cells - 1), np.clip(sj, 0, g.width_cells - 1)].all():
            poly = smooth
    spacing = profile.nominal_speed * dt
    pos = _resample(poly, spacing)
    if pos.shape[0] < length:
        raise NoPathError(f"path supports {pos.shape[0]} samples, {length} requested")
    pos = pos[:length]
    classes = world.class_grid()
    pi, pj, _ = g.cell_indices(pos)
    tangent = np.gradient(pos, axis=0)
    tangent /= np.maximum(np.linalg.norm(tangent, axis=1, keepdims=True), 1e-12)
    out = []
    for k in range(length):
        vc = tangent[k] * profile.nominal_speed
        sigma = profile.noise_for(int(classes[pi[k], pj[k]]))
        va = vc + rng.normal(0.0, sigma, 2) if sigma > 0 else vc.copy()
        out.append(TrajectorySample((float(pos[k, 0]), float(pos[k, 1])),
                                    (float(va[0]), float(va[1])), (float(vc[0]), float(vc[1])), k * dt))
    return out


# --- scans --------------------------------------------------------------------

def heading_at(trajectory: list[TrajectorySample], index: int) -> float:
    vx, vy = trajectory[index].v_cmd
    return math.atan2(vy, vx)


def extract_scan(world: World, pose: tuple[float, float, float], grid: GridConfig) -> PointCloud:
    """World points around ``pose`` in the robot frame (x forward, z from local ground)."""
    x0, y0, yaw = pose
    pts = world.cloud.points
    reach = math.hypot(grid.width_cells * grid.resolution, grid.height_cells * grid.resolution)
    near = np.hypot(pts[:, 0] - x0, pts[:, 1] - y0) <= reach
    local = to_robot_frame(pts[near], pose, float(world.height(x0, y0)))
    _, _, inside = grid.cell_indices(local)
    labels = world.cloud.labels[near][inside]
    return PointCloud(local[inside], labels)


def to_robot_frame(points: np.ndarray, pose: tuple[float, float, float], z0: float = 0.0) -> np.ndarray:
    x0, y0, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    dx = points[:, 0] - x0
    dy = points[:, 1] - y0
    out = np.empty((points.shape[0], points.shape[1]))
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    if points.shape[1] > 2:
        out[:, 2] = points[:, 2] - z0
    return out


def trajectory_to_frame(samples: list[TrajectorySample], pose) -> list[TrajectorySample]:
    x0, y0, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    rot = lambda v: (c * v[0] + s * v[1], -s * v[0] + c * v[1])  # noqa: E731
    out = []
    for smp in samples:
        px, py = smp.position[0] - x0, smp.position[1] - y0
        out.append(TrajectorySample(rot((px, py)), rot(smp.v_actual), rot(smp.v_cmd), smp.time))
    return out
