"""Ground-truth BEV labels and precision/recall/F1 with normal as the positive class."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import MissingLabels, ShapeMismatch
from .geometry import PointCloud
from .hypersphere import Hypersphere
from .voxel import GridConfig

EMPTY = 0
NORMAL = 1
ANOMALOUS = 2


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    evaluated_cells: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> Metrics:
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, int(tp), int(fp), int(fn), int(tn), int(tp + fp + fn + tn))

    def to_dict(self) -> dict:
        return asdict(self)


def project_labels(cloud: PointCloud, anomalous_ids, grid: GridConfig) -> np.ndarray:
    """Per-cell EMPTY/NORMAL/ANOMALOUS; any anomalous point marks its cell."""
    if cloud.labels is None:
        raise MissingLabels("label projection needs a labeled cloud")
    out = np.full(grid.shape, EMPTY, dtype=np.int8)
    if len(cloud) == 0:
        return out
    i, j, inside = grid.cell_indices(cloud.points)
    if grid.z_range is not None:
        z = cloud.points[:, 2]
        inside &= (z >= grid.z_range[0]) & (z <= grid.z_range[1])
    flat = (i * grid.width_cells + j)[inside]
    bad = np.isin(cloud.labels[inside], np.asarray(list(anomalous_ids), dtype=np.int64))
    ncell = grid.height_cells * grid.width_cells
    occupied = np.bincount(flat, minlength=ncell) > 0
    anomalous = np.bincount(flat, bad.astype(np.int64), minlength=ncell) > 0
    view = out.reshape(-1)
    view[occupied] = NORMAL
    view[anomalous] = ANOMALOUS
    return out


def classify_cells(cells: np.ndarray, z: np.ndarray, sphere: Hypersphere,
                   grid: GridConfig) -> np.ndarray:
    """Label grid from per-cell latents: inside the sphere is NORMAL."""
    out = np.full(grid.shape, EMPTY, dtype=np.int8)
    if cells.size:
        inside = sphere.distances(z) <= sphere.radius
        out.reshape(-1)[cells] = np.where(inside, NORMAL, ANOMALOUS)
    return out


def predict_grid(model, cloud: PointCloud, grid: GridConfig | None = None) -> np.ndarray:
    grid = grid or model.grid
    pred = model.predict_clouds([cloud], grid)[0]
    return classify_cells(pred.cells, pred.z, model.sphere, grid)


def confusion(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int, int]:
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    keep = (pred != EMPTY) & (truth != EMPTY)
    p, t = pred[keep], truth[keep]
    tp = int(np.sum((p == NORMAL) & (t == NORMAL)))
    fp = int(np.sum((p == NORMAL) & (t == ANOMALOUS)))
    fn = int(np.sum((p == ANOMALOUS) & (t == NORMAL)))
    tn = int(np.sum((p == ANOMALOUS) & (t == ANOMALOUS)))
    return tp, fp, fn, tn


def score(pred: np.ndarray, truth: np.ndarray) -> Metrics:
    """Cells empty in either grid are excluded."""
    return Metrics.from_counts(*confusion(pred, truth))


def aggregate(per_scan: list[Metrics], macro: bool = False) -> Metrics:
    """Micro (pooled counts) or macro (mean of per-scan ratios) aggregate."""
    tp = sum(m.tp for m in per_scan)
    fp = sum(m.fp for m in per_scan)
    fn = sum(m.fn for m in per_scan)
    tn = sum(m.tn for m in per_scan)
    if not macro:
        return Metrics.from_counts(tp, fp, fn, tn)
    if not per_scan:
        return Metrics(0.0, 0.0, 0.0, 0, 0, 0, 0, 0)
    return Metrics(float(np.mean([m.precision for m in per_scan])),
                   float(np.mean([m.recall for m in per_scan])),
                   float(np.mean([m.f1 for m in per_scan])),
                   tp, fp, fn, tn, tp + fp + fn + tn)


METRIC_COLUMNS = ("scan_id", "precision", "recall", "f1", "tp", "fp", "fn", "tn")


def write_metrics_csv(rows: list[tuple[str, Metrics]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for scan_id, m in rows:
            writer.writerow([scan_id, repr(m.precision), repr(m.recall), repr(m.f1),
                             m.tp, m.fp, m.fn, m.tn])


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
