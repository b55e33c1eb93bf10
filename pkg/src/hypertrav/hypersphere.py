"""Positive hypersphere: center, EMA radius and unlabeled-latent classification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDistanceSet, EmptyPositiveSet


@dataclass
class Hypersphere:
    center: np.ndarray
    radius: float = 0.0
    momentum: float = 0.5
    update_period: int = 5

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.center)):
            raise ValueError("center must be finite")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if not 0 <= self.momentum <= 1:
            raise ValueError("momentum must lie in [0, 1]")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")

    def distances(self, z: np.ndarray) -> np.ndarray:
        return distances(z, self.center)


@dataclass(frozen=True)
class LatentPartition:
    """Row indices of positive latents and of the normal/anomalous unlabeled ones."""

    positive: np.ndarray
    normal: np.ndarray
    anomalous: np.ndarray

    @property
    def n_p(self) -> int:
        return int(self.positive.size)

    @property
    def n_n(self) -> int:
        return int(self.normal.size)

    @property
    def n_a(self) -> int:
        return int(self.anomalous.size)

    @property
    def unlabeled(self) -> np.ndarray:
        return np.sort(np.concatenate([self.normal, self.anomalous]))


def distances(z: np.ndarray, center: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1, np.size(center))
    return np.sqrt(((z - center) ** 2).sum(axis=1))


def compute_center(z_p: np.ndarray) -> np.ndarray:
    z_p = np.asarray(z_p, dtype=np.float64)
    if z_p.ndim != 2 or z_p.shape[0] == 0:
        raise EmptyPositiveSet("cannot compute a center from zero positive latents")
    return z_p.mean(axis=0)


def update_radius(r_prev: float, d_p, momentum: float) -> float:
    """EMA of the mean positive distance: ``eps * r_prev + (1 - eps) * mean(d_p)``."""
    d_p = np.asarray(d_p, dtype=np.float64).reshape(-1)
    if d_p.size == 0:
        raise EmptyDistanceSet("no positive distances")
    if np.any(d_p < 0):
        raise ValueError("distances must be nonnegative")
    return momentum * r_prev + (1.0 - momentum) * float(d_p.mean())


def classify(z_u: np.ndarray, sphere: Hypersphere, unlabeled_rows: np.ndarray | None = None,
             positive_rows: np.ndarray | None = None) -> LatentPartition:
    """Split unlabeled latents into inside (normal, boundary included) and outside.

    ``unlabeled_rows`` maps each latent to a caller-side row id (defaults to
    0..N_u-1) so the partition can index back into a larger batch.
    """
    z_u = np.asarray(z_u)
    if unlabeled_rows is None:
        unlabeled_rows = np.arange(z_u.shape[0])
    if positive_rows is None:
        positive_rows = np.zeros(0, dtype=np.int64)
    if z_u.shape[0] == 0:
        empty = np.zeros(0, dtype=np.int64)
        return LatentPartition(np.asarray(positive_rows), empty, empty)
    inside = sphere.distances(z_u) <= sphere.radius
    return LatentPartition(np.asarray(positive_rows), np.asarray(unlabeled_rows)[inside],
                           np.asarray(unlabeled_rows)[~inside])
