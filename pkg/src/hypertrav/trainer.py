"""Joint training of the traversability network and the positive hypersphere."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import EmptyPositiveSet, NumericFailure, TooFewSamples
from .evaluator import Metrics, aggregate, classify_cells, project_labels, score
from .geometry import AugmentPolicy, PointCloud, augment, estimate_ground_slope
from .hypersphere import Hypersphere, classify, compute_center, update_radius
from .losses import (LossMode, LossReport, LossWeights, anomaly_loss, apply_mode,
                     recon_loss, regression_loss, total_loss)
from .model import TrainedModel
from .nn import Adam, NetworkConfig, TravNet
from .supervision import SupervisionGrid, SupervisionWindow, rasterize
from .voxel import GridConfig, PillarTensor, voxelize

log = logging.getLogger(__name__)


@dataclass
class Sample:
    """One scan with its supervision window, in the scan's own frame."""

    cloud: PointCloud
    window: SupervisionWindow
    grid: GridConfig
    scan_id: str = ""
    anomalous_ids: tuple[int, ...] | None = None
    _pillars: PillarTensor | None = field(default=None, repr=False)
    _supervision: SupervisionGrid | None = field(default=None, repr=False)
    _slopes: dict = field(default_factory=dict, repr=False)

    def ground_slope(self, policy: AugmentPolicy) -> float | None:
        """Cached ground slope of the unaugmented scan under ``policy``."""
        key = (policy.ransac, policy.pitch_slope_gate)
        if key not in self._slopes:
            self._slopes[key] = estimate_ground_slope(self.cloud, policy)
        return self._slopes[key]

    @property
    def supervision(self) -> SupervisionGrid:
        if self._supervision is None:
            self._supervision = rasterize(self.window, self.grid)
        return self._supervision

    @property
    def pillars(self) -> PillarTensor:
        if self._pillars is None:
            p = voxelize(self.cloud, self.grid, seed=0)
            self._pillars = PillarTensor(p.features.astype(np.float32), p.counts, p.grid)
        return self._pillars

    @property
    def labeled(self) -> bool:
        return self.cloud.labels is not None and self.anomalous_ids is not None

    def truth(self) -> np.ndarray:
        return project_labels(self.cloud, self.anomalous_ids, self.grid)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 12
    epochs: int = 100
    k: int = 5
    momentum: float = 0.5
    zeta: float = 1e-6
    weights: tuple[float, float, float] = (1.0, 1.0, 20.0)
    loss_mode: LossMode = LossMode.NORMAL_ANOMALOUS
    augment: AugmentPolicy | None = field(default_factory=AugmentPolicy)
    seed: int = 0
    split: tuple[float, float] = (0.8, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "loss_mode", LossMode.parse(self.loss_mode))
        if self.epochs < 1 or self.k < 1 or self.batch_size < 1:
            raise ValueError("epochs, k and batch_size must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError("split must be nonnegative and sum to 1")

    @property
    def loss_weights(self) -> LossWeights:
        a, r, g = self.weights
        return LossWeights(a, r, g, self.zeta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_mode"] = self.loss_mode.value
        d["weights"] = list(self.weights)
        d["split"] = list(self.split)
        if self.augment is not None:
            aug = asdict(self.augment)
            aug["yaw_range"] = list(self.augment.yaw_range)
            d["augment"] = aug
        return d


@dataclass
class EpochStats:
    report: LossReport
    n_normal: int
    n_anomalous: int
    skipped_batches: int
    z_p: np.ndarray  # positive latents seen during the epoch, in training mode


@dataclass
class EpochLog:
    epoch: int
    anomaly: float
    recon: float
    regression: float
    total: float
    r_p: float
    n_normal: int
    n_anomalous: int
    mean_dp: float
    center_updated: bool
    val_f1: float
    val_precision: float
    val_recall: float
    val_loss: float


LOG_COLUMNS = ("epoch", "anomaly", "recon", "regression", "total", "r_p", "N_n", "N_a",
               "mean_dp", "center_updated", "val_f1", "val_precision", "val_recall", "val_loss")


def split_dataset(samples: list, split=(0.8, 0.2), seed: int = 0) -> tuple[list, list]:
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(1, int(round(split[0] * n))), n - 1)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


def _augmented_inputs(sample: Sample, policy: AugmentPolicy | None,
                      rng: np.random.Generator) -> tuple[PillarTensor, SupervisionGrid]:
    if policy is None:
        return sample.pillars, sample.supervision
    slope = sample.ground_slope(policy) if policy.pitch_enabled else None
    cloud, traj = augment(sample.cloud, sample.window.positions, policy, rng, slope)
    if cloud is sample.cloud:
        return sample.pillars, sample.supervision
    sup = rasterize(sample.window.with_positions(traj), sample.grid)
    p = voxelize(cloud, sample.grid, seed=int(rng.integers(2**31)))
    return PillarTensor(p.features.astype(np.float32), p.counts, p.grid), sup


@dataclass
class BatchGraph:
    total: Tensor
    anomaly: Tensor
    recon: Tensor
    regression: Tensor
    n_normal: int
    n_anomalous: int
    z: Tensor
    n_positive: int


def batch_losses(net: TravNet, pillars: list[PillarTensor], sups: list[SupervisionGrid],
                 sphere: Hypersphere, cfg: TrainConfig) -> BatchGraph:
    """Forward one batch of scans and build the mode-dependent loss graph."""
    grid = pillars[0].grid
    h, w = grid.shape
    q = net.pillar_encoder_forward(pillars)
    flat_q = q.reshape(len(pillars) * h * w, q.shape[-1])
    occ = np.concatenate([p.counts.reshape(-1) > 0 for p in pillars])
    vis = np.concatenate([s.positive.reshape(-1) for s in sups])
    pos_rows = np.flatnonzero(occ & vis)
    unl_rows = np.flatnonzero(occ & ~vis)
    if pos_rows.size == 0:
        raise EmptyPositiveSet("batch has no visited occupied cells")
    targets = np.concatenate([s.values.reshape(-1) for s in sups])[pos_rows]

    qsel = ag.take_rows(flat_q, np.concatenate([pos_rows, unl_rows]))
    head = net.head_forward(qsel)
    n_p = pos_rows.size
    pos = np.arange(n_p)
    unl = np.arange(n_p, n_p + unl_rows.size)
    part = classify(head.z.data[unl], sphere, unlabeled_rows=unl, positive_rows=pos)
    part = apply_mode(part, cfg.loss_mode)

    z_p = ag.take_rows(head.z, part.positive)
    z_n = ag.take_rows(head.z, part.normal)
    z_a = ag.take_rows(head.z, part.anomalous)
    center = sphere.center.astype(net.dtype)
    l_anom = anomaly_loss(z_p, z_n, z_a, center, cfg.zeta, cfg.loss_mode)
    l_rec = recon_loss(ag.take_rows(head.u, pos), ag.take_rows(qsel, pos))
    l_reg = regression_loss(ag.take_rows(head.t, pos), targets, ag.take_rows(head.t, part.anomalous))
    total = total_loss(l_anom, l_rec, l_reg, cfg.loss_weights)
    return BatchGraph(total, l_anom, l_rec, l_reg, part.n_n, part.n_a, head.z, n_p)


def train_epoch(net: TravNet, opt: Adam, batches: list[list[Sample]], sphere: Hypersphere,
                cfg: TrainConfig, rng: np.random.Generator) -> EpochStats:
    """One pass over ``batches``; the sphere stays frozen throughout."""
    net.train()
    sums = np.zeros(4)
    n_norm = n_anom = used = skipped = 0
    z_chunks = []
    for batch in batches:
        inputs = [_augmented_inputs(s, cfg.augment, rng) for s in batch]
        pillars = [p for p, _ in inputs]
        sups = [s for _, s in inputs]
        try:
            g = batch_losses(net, pillars, sups, sphere, cfg)
        except EmptyPositiveSet:
            log.warning("skipping batch without positive cells")
            skipped += 1
            continue
        vals = np.array([g.anomaly.item(), g.recon.item(), g.regression.item(), g.total.item()])
        if not np.all(np.isfinite(vals)):
            raise NumericFailure(f"non-finite loss {vals.tolist()}")
        z_chunks.append(g.z.data[:g.n_positive].astype(np.float64))
        net.zero_grad()
        g.total.backward()
        opt.step()
        sums += vals
        n_norm += g.n_normal
        n_anom += g.n_anomalous
        used += 1
    if used == 0:
        raise EmptyPositiveSet("every batch in the epoch lacked positive cells")
    mean = sums / used
    return EpochStats(LossReport(*mean.tolist()), n_norm, n_anom, skipped, np.concatenate(z_chunks))


def positive_latents(net: TravNet, samples: list[Sample], batch_size: int = 12) -> np.ndarray:
    """Training-mode positive latents of unaugmented scans, without updates."""
    net.train()
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        pillars = [s.pillars for s in chunk]
        h, w = chunk[0].grid.shape
        q = net.pillar_encoder_forward(pillars)
        occ = np.concatenate([p.counts.reshape(-1) > 0 for p in pillars])
        vis = np.concatenate([s.supervision.positive.reshape(-1) for s in chunk])
        rows = np.flatnonzero(occ & vis)
        if rows.size:
            flat = q.reshape(len(chunk) * h * w, q.shape[-1])
            out.append(net.head_forward(ag.take_rows(flat, rows)).z.data.astype(np.float64))
    if not out:
        raise EmptyPositiveSet("training set has no visited occupied cells")
    return np.concatenate(out)


def validate(model: TrainedModel, samples: list[Sample]) -> Metrics | None:
    if not samples or not all(s.labeled for s in samples):
        return None
    preds = model.predict_pillars([s.pillars for s in samples])
    per_scan = [score(classify_cells(p.cells, p.z, model.sphere, s.grid), s.truth())
                for s, p in zip(samples, preds)]
    return aggregate(per_scan)


def validation_loss(model: TrainedModel, samples: list[Sample], cfg: TrainConfig) -> float:
    net = model.net
    was = net.training
    net.eval()
    try:
        totals = []
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start:start + cfg.batch_size]
            try:
                g = batch_losses(net, [s.pillars for s in chunk], [s.supervision for s in chunk],
                                 model.sphere, cfg)
            except EmptyPositiveSet:
                continue
            totals.append(g.total.item())
    finally:
        net.training = was
    return float(np.mean(totals)) if totals else math.inf


@dataclass
class FitResult:
    model: TrainedModel
    history: list[EpochLog]
    final_model: TrainedModel | None = None


def _snapshot(model: TrainedModel, opt: Adam) -> dict:
    return {
        "net": model.net.copy_state(),
        "adam": {k: v.copy() for k, v in opt.state_arrays().items()},
        "adam_step": opt.step_count,
        "center": model.sphere.center.copy(),
        "radius": model.sphere.radius,
    }


def fit(samples: list[Sample], cfg: TrainConfig = TrainConfig(),
        net_config: NetworkConfig = NetworkConfig(),
        val_samples: list[Sample] | None = None,
        on_epoch: Callable[[EpochLog, TrainedModel], None] | None = None) -> FitResult:
    """Train and return the epoch with the best validation metric.

    Without ``val_samples`` the data is split by ``cfg.split``.  Validation
    uses F1 when every validation scan is labeled, otherwise total loss.
    ``on_epoch`` is called after each epoch with its log row and the live model.
    """
    if val_samples is None:
        train, val = split_dataset(samples, cfg.split, cfg.seed)
    else:
        train, val = list(samples), list(val_samples)
    if not train:
        raise TooFewSamples("empty training set")
    grid = train[0].grid
    net = TravNet(net_config, seed=cfg.seed)
    opt = Adam(net.params, lr=cfg.lr)
    sphere = Hypersphere(np.zeros(net_config.latent_dim), 0.0, cfg.momentum, cfg.k)
    model = TrainedModel(net, sphere, grid, cfg.to_dict(), 0, opt)
    rng = np.random.default_rng([cfg.seed, 1])
    use_f1 = bool(val) and all(s.labeled for s in val)

    # epoch 0: center and radius from the untrained network
    z_p = positive_latents(net, train, cfg.batch_size)
    sphere.center = compute_center(z_p)
    sphere.radius = update_radius(0.0, sphere.distances(z_p), 0.0)

    history: list[EpochLog] = []
    best_key = -math.inf
    best = None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        batches = [[train[i] for i in order[s:s + cfg.batch_size]]
                   for s in range(0, len(train), cfg.batch_size)]
        stats = train_epoch(net, opt, batches, sphere, cfg, rng)

        z_p = stats.z_p
        center_updated = epoch % cfg.k == 0
        if center_updated:
            sphere.center = compute_center(z_p)
        d_p = sphere.distances(z_p)
        sphere.radius = update_radius(sphere.radius, d_p, cfg.momentum)

        metrics = validate(model, val) if use_f1 else None
        vloss = validation_loss(model, val, cfg) if val else math.nan
        rep = stats.report
        row = EpochLog(epoch, rep.anomaly, rep.recon, rep.regression, rep.total, sphere.radius,
                       stats.n_normal, stats.n_anomalous, float(d_p.mean()), center_updated,
                       metrics.f1 if metrics else math.nan,
                       metrics.precision if metrics else math.nan,
                       metrics.recall if metrics else math.nan, vloss)
        history.append(row)
        log.info("epoch %d total=%.4f r_p=%.4f val_f1=%.4f", epoch, rep.total, sphere.radius, row.val_f1)
        if on_epoch is not None:
            on_epoch(row, model)

        if use_f1:
            key = metrics.f1
        elif val:
            key = -vloss
        else:
            key = -rep.total
        if key > best_key or best is None:
            best_key = key
            best = (epoch, _snapshot(model, opt))

    final = TrainedModel(net, Hypersphere(sphere.center.copy(), sphere.radius, cfg.momentum, cfg.k),
                         grid, cfg.to_dict(), cfg.epochs, opt)
    epoch, snap = best
    best_net = TravNet(net_config, seed=cfg.seed)
    best_net.load_state_arrays(snap["net"])
    best_net.eval()
    best_opt = Adam(best_net.params, lr=cfg.lr)
    best_opt.load_state_arrays(snap["adam"], snap["adam_step"])
    best_sphere = Hypersphere(snap["center"], snap["radius"], cfg.momentum, cfg.k)
    best_model = TrainedModel(best_net, best_sphere, grid, cfg.to_dict(), epoch, best_opt)
    return FitResult(best_model, history, final)


def write_training_log(history: list[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in history:
            writer.writerow([r.epoch, repr(r.anomaly), repr(r.recon), repr(r.regression),
                             repr(r.total), repr(r.r_p), r.n_normal, r.n_anomalous,
                             repr(r.mean_dp), int(r.center_updated), repr(r.val_f1),
                             repr(r.val_precision), repr(r.val_recall), repr(r.val_loss)])


def read_training_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def with_mode(cfg: TrainConfig, mode: LossMode | str) -> TrainConfig:
    return replace(cfg, loss_mode=LossMode.parse(mode))
