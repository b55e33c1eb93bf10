"""Anomaly, reconstruction and regression losses and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import EmptyPositiveSet, SizeMismatch
from .hypersphere import LatentPartition


class LossMode(str, Enum):
    """Which unlabeled sets enter the anomaly loss.

    ``NONE`` keeps only the positive pull, ``ALL_UNLABELED`` pushes every
    unlabeled latent away, ``ANOMALOUS_ONLY`` drops the normal pull and
    ``NORMAL_ANOMALOUS`` is the full objective.
    """

    NONE = "none"
    ALL_UNLABELED = "all_unlabeled"
    ANOMALOUS_ONLY = "anomalous_only"
    NORMAL_ANOMALOUS = "normal_anomalous"

    @classmethod
    def parse(cls, value: str | LossMode) -> LossMode:
        if isinstance(value, LossMode):
            return value
        key = value.replace("-", "_").lower()
        if key == "full":
            return cls.NORMAL_ANOMALOUS
        return cls(key)


@dataclass(frozen=True)
class LossWeights:
    anomaly: float = 1.0
    recon: float = 1.0
    regression: float = 20.0
    zeta: float = 1e-6

    def __post_init__(self):
        if min(self.anomaly, self.recon, self.regression) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.zeta > 0:
            raise ValueError("zeta must be > 0")


@dataclass(frozen=True)
class LossReport:
    anomaly: float
    recon: float
    regression: float
    total: float


def apply_mode(partition: LatentPartition, mode: LossMode) -> LatentPartition:
    """Repartition the unlabeled rows as the ablation mode dictates."""
    mode = LossMode.parse(mode)
    if mode is LossMode.ALL_UNLABELED:
        empty = np.zeros(0, dtype=np.int64)
        return LatentPartition(partition.positive, empty, partition.unlabeled)
    return partition


def _sq_dist(z: Tensor, center: np.ndarray) -> Tensor:
    return ag.square(z - np.asarray(center, dtype=z.dtype)).sum(axis=1)


def anomaly_loss(z_p, z_n, z_a, center, zeta: float = 1e-6,
                 mode: LossMode | str = LossMode.NORMAL_ANOMALOUS) -> Tensor:
    """Positive pull + normal pull + inverse-distance push of anomalous latents.

    Empty normal or anomalous sets contribute zero.  ``mode`` switches terms
    off: NONE keeps only the positive term, ANOMALOUS_ONLY drops the normal
    term.  (ALL_UNLABELED is realised upstream by :func:`apply_mode`.)
    """
    mode = LossMode.parse(mode)
    z_p = as_tensor(z_p)
    if z_p.shape[0] == 0:
        raise EmptyPositiveSet("anomaly loss needs at least one positive latent")
    loss = ag.tmean(_sq_dist(z_p, center))
    z_n = as_tensor(z_n, z_p.dtype)
    z_a = as_tensor(z_a, z_p.dtype)
    if mode is LossMode.NORMAL_ANOMALOUS and z_n.shape[0] > 0:
        loss = loss + ag.tmean(_sq_dist(z_n, center))
    if mode is not LossMode.NONE and z_a.shape[0] > 0:
        loss = loss + ag.tmean(ag.reciprocal(_sq_dist(z_a, center) + zeta))
    return loss


def recon_loss(u_p, q_p) -> Tensor:
    u_p, q_p = as_tensor(u_p), as_tensor(q_p)
    if u_p.shape != q_p.shape:
        raise SizeMismatch(f"reconstruction {u_p.shape} vs target {q_p.shape}")
    if u_p.shape[0] == 0:
        raise SizeMismatch("reconstruction loss needs at least one pair")
    return ag.tmean(ag.square(u_p - q_p).sum(axis=1))


def regression_loss(t_p, targets, t_a) -> Tensor:
    """MSE of positive scores to their targets plus MSE of anomalous scores to 0."""
    t_p = as_tensor(t_p)
    targets = np.asarray(targets, dtype=t_p.dtype).reshape(-1)
    t_p_flat = t_p.reshape(-1)
    if t_p_flat.shape[0] != targets.shape[0] or targets.shape[0] == 0:
        raise SizeMismatch(f"{t_p_flat.shape[0]} predictions vs {targets.shape[0]} targets")
    loss = ag.tmean(ag.square(t_p_flat - targets))
    t_a = as_tensor(t_a, t_p.dtype).reshape(-1)
    if t_a.shape[0] > 0:
        loss = loss + ag.tmean(ag.square(t_a))
    return loss


def total_loss(anomaly, recon, regression, weights: LossWeights):
    """Weighted sum; works on Tensors (for backprop) or plain floats."""
    return weights.anomaly * anomaly + weights.recon * recon + weights.regression * regression
