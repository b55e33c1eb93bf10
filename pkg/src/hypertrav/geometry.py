"""Point clouds, ground-plane estimation and geometric augmentation.

Rotation conventions are right-handed::

    R_z(psi)   = [[cos, -sin, 0], [sin, cos, 0], [0, 0, 1]]
    R_y(theta) = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, DegenerateCloud


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != pts.shape[0]:
                raise ValueError(f"{lab.shape[0]} labels for {pts.shape[0]} points")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> PointCloud:
        return PointCloud(points, self.labels)

    def subset(self, mask_or_index) -> PointCloud:
        labels = None if self.labels is None else self.labels[mask_or_index]
        return PointCloud(self.points[mask_or_index], labels)


@dataclass(frozen=True)
class Plane:
    """Plane ``normal . p = offset`` with an upward unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("plane normal must be a finite nonzero vector")
        offset = float(self.offset) / norm
        n = n / norm
        if n[2] < 0:
            n, offset = -n, -offset
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", offset)

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal - self.offset)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_dist: float = 0.05
    min_inlier_frac: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_dist > 0:
            raise ValueError("inlier_dist must be > 0")
        if not 0 < self.min_inlier_frac <= 1:
            raise ValueError("min_inlier_frac must lie in (0, 1]")


GATE_TOL = 1e-9  # radians


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    yaw_range: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    pitch_enabled: bool = True
    pitch_slope_gate: float = math.radians(10.0)
    seed: int = 0
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        lo, hi = self.yaw_range
        if not (-math.pi <= lo <= hi <= math.pi):
            raise ValueError("yaw_range must be an ordered pair within [-pi, pi]")
        if self.pitch_slope_gate < 0:
            raise ValueError("pitch_slope_gate must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be a probability")

    @classmethod
    def disabled(cls) -> AugmentPolicy:
        return cls(flip_prob=0.0, yaw_range=(0.0, 0.0), pitch_enabled=False)


def rot_z(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


FLIP_X = np.diag([-1.0, 1.0, 1.0])


def transform(cloud: PointCloud, matrix: np.ndarray) -> PointCloud:
    return cloud.with_points(cloud.points @ np.asarray(matrix).T)


def flip_x(cloud: PointCloud) -> PointCloud:
    pts = cloud.points.copy()
    pts[:, 0] = -pts[:, 0]
    return cloud.with_points(pts)


def rotate_yaw(cloud: PointCloud, psi: float) -> PointCloud:
    return transform(cloud, rot_z(psi))


def rotate_pitch(cloud: PointCloud, theta_r: float) -> PointCloud:
    return transform(cloud, rot_y(theta_r))


def slope_angle(plane: Plane) -> float:
    """Angle between the plane normal and the vertical axis, in radians."""
    return math.acos(min(1.0, max(-1.0, float(plane.normal[2]))))


def _fit_plane_lsq(points: np.ndarray) -> Plane:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    return Plane(normal, float(normal @ centroid))


def ransac_ground(cloud: PointCloud, cfg: RansacConfig = RansacConfig()) -> tuple[Plane, float]:
    """Fit the dominant plane by RANSAC, then refit it on its inliers.

    Returns the plane and the fraction of points within ``cfg.inlier_dist``.
    """
    pts = cloud.points
    n = pts.shape[0]
    if n < 3:
        raise DegenerateCloud(f"need at least 3 points, got {n}")
    rng = np.random.default_rng(cfg.seed)
    # three distinct indices per hypothesis
    idx = np.stack([rng.choice(n, size=3, replace=False) for _ in range(cfg.iterations)])
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1), 1e-300)
    valid = norms > 1e-9 * scale
    if not valid.any():
        raise DegenerateCloud("all sampled hypotheses are collinear")
    normals = normals[valid] / norms[valid, None]
    offsets = np.einsum("ij,ij->i", normals, a[valid])

    counts = np.empty(normals.shape[0], dtype=np.int64)
    chunk = max(1, 4_000_000 // max(n, 1))
    for start in range(0, normals.shape[0], chunk):
        sl = slice(start, start + chunk)
        dist = np.abs(pts @ normals[sl].T - offsets[sl])
        counts[sl] = (dist < cfg.inlier_dist).sum(axis=0)
    best = int(np.argmax(counts))
    plane = Plane(normals[best], offsets[best])

    inliers = plane.distance(pts) < cfg.inlier_dist
    if inliers.sum() >= 3:
        refit = _fit_plane_lsq(pts[inliers])
        plane = refit
        inliers = plane.distance(pts) < cfg.inlier_dist
    return plane, float(inliers.mean())


def _lift_trajectory(cloud: PointCloud, traj_xy: np.ndarray, k: int = 8) -> np.ndarray:
    """Attach a ground height to each trajectory position from nearby points."""
    out = np.zeros((traj_xy.shape[0], 3))
    out[:, :2] = traj_xy
    if len(cloud) == 0 or traj_xy.shape[0] == 0:
        return out
    tree = cKDTree(cloud.points[:, :2])
    _, nn = tree.query(traj_xy, k=min(k, len(cloud)))
    nn = np.asarray(nn).reshape(traj_xy.shape[0], -1)
    out[:, 2] = np.median(cloud.points[nn, 2], axis=1)
    return out


def ground_candidates(cloud: PointCloud) -> PointCloud:
    """Points at or below the median height, the subset fed to RANSAC."""
    if len(cloud) == 0:
        return cloud
    z = cloud.points[:, 2]
    return cloud.subset(z <= np.median(z))


def estimate_ground_slope(cloud: PointCloud, policy: AugmentPolicy) -> float | None:
    """Ground slope if the scene has one dominant ground segment, else None."""
    plane, frac = ransac_ground(ground_candidates(cloud), policy.ransac)
    if frac < policy.ransac.min_inlier_frac:
        return None
    return slope_angle(plane)


def augment(
    cloud: PointCloud,
    traj_xy: np.ndarray,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    ground_slope: float | None | str = "estimate",
) -> tuple[PointCloud, np.ndarray]:
    """Flip, yaw and (gated) pitch the cloud and the trajectory together.

    Random draws happen in a fixed order so results depend only on ``rng``.
    ``ground_slope`` may carry a cached result of ``estimate_ground_slope``;
    flips and yaws do not change it.
    """
    traj_xy = np.asarray(traj_xy, dtype=np.float64).reshape(-1, 2)
    matrix = np.eye(3)

    do_flip = rng.random() < policy.flip_prob
    psi = rng.uniform(*policy.yaw_range)
    u_pitch = rng.uniform(-1.0, 1.0)

    if do_flip:
        matrix = FLIP_X @ matrix
    if psi != 0.0:
        matrix = rot_z(psi) @ matrix

    theta_r = 0.0
    if policy.pitch_enabled:
        theta = (estimate_ground_slope(cloud, policy) if ground_slope == "estimate"
                 else ground_slope)
        # fitted slopes carry roundoff, so a plane at the gate counts as steep
        if theta is not None and theta < policy.pitch_slope_gate - GATE_TOL:
            theta_r = u_pitch * theta

    if theta_r != 0.0:
        lifted = _lift_trajectory(cloud, traj_xy)
        matrix = rot_y(theta_r) @ matrix
        new_traj = (lifted @ matrix.T)[:, :2]
    else:
        new_traj = traj_xy @ matrix[:2, :2].T

    if np.array_equal(matrix, np.eye(3)):
        return cloud, traj_xy.copy()
    return transform(cloud, matrix), new_traj


# --- file formats -----------------------------------------------------------

def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """ASCII PLY with x, y, z and an optional integer ``label`` property."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if cloud.labels is not None:
        lines.append("property int label")
    lines.append("end_header")
    body = []
    if cloud.labels is None:
        for x, y, z in cloud.points.tolist():
            body.append(f"{x!r} {y!r} {z!r}")
    else:
        for (x, y, z), lab in zip(cloud.points.tolist(), cloud.labels.tolist()):
            body.append(f"{x!r} {y!r} {z!r} {lab}")
    Path(path).write_text("\n".join(lines + body) + "\n", encoding="ascii")


def read_ply(path: str | Path) -> PointCloud:
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{path}: not a PLY file")
    count = None
    props: list[str] = []
    in_vertex = False
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise DataError(f"{path}: only ascii PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None or count is None:
        raise DataError(f"{path}: malformed PLY header")
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise DataError(f"{path}: missing property {axis}")
    rows = lines[header_end + 1: header_end + 1 + count]
    if len(rows) != count:
        raise DataError(f"{path}: expected {count} vertices, found {len(rows)}")
    if count == 0:
        data = np.zeros((0, len(props)))
    else:
        try:
            data = np.array(" ".join(rows).split(), dtype=np.float64).reshape(count, len(props))
        except ValueError as exc:
            raise DataError(f"{path}: bad vertex row: {exc}") from exc
    pts = data[:, [props.index("x"), props.index("y"), props.index("z")]]
    labels = data[:, props.index("label")].astype(np.int64) if "label" in props else None
    return PointCloud(pts, labels)


GSPC_MAGIC = b"GSPC"
GSPC_HAS_LABELS = 1


def write_gspc(cloud: PointCloud, path: str | Path) -> None:
    """Little-endian binary cloud.

    Layout: ``b"GSPC"``, u32 count, u32 flags (bit 0: labels present),
    ``count`` f32 xyz triples, then ``count`` u16 labels if flagged.
    """
    flags = GSPC_HAS_LABELS if cloud.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(GSPC_MAGIC + struct.pack("<II", len(cloud), flags))
        fh.write(cloud.points.astype("<f4").tobytes())
        if cloud.labels is not None:
            if cloud.labels.min(initial=0) < 0 or cloud.labels.max(initial=0) > 0xFFFF:
                raise ValueError("labels must fit in u16")
            fh.write(cloud.labels.astype("<u2").tobytes())


def read_gspc(path: str | Path) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != GSPC_MAGIC or len(raw) < 12:
        raise DataError(f"{path}: bad GSPC header")
    count, flags = struct.unpack("<II", raw[4:12])
    need = 12 + 12 * count + (2 * count if flags & GSPC_HAS_LABELS else 0)
    if len(raw) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(raw)}")
    pts = np.frombuffer(raw, dtype="<f4", count=3 * count, offset=12).reshape(count, 3)
    labels = None
    if flags & GSPC_HAS_LABELS:
        labels = np.frombuffer(raw, dtype="<u2", count=count, offset=12 + 12 * count)
    return PointCloud(pts.astype(np.float64), labels)


def read_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_gspc(path)
