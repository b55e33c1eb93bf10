"""Trained model bundle, batched inference and the checkpoint container.

Checkpoint layout (all integers little-endian)::

    b"HTCK"            magic
    u32                format version
    u64                header length L
    L bytes            UTF-8 JSON header (sorted keys)
    ...                raw array payloads, in header order

The header holds ``meta`` (configs, hypersphere scalars, optimizer scalars,
best epoch) and ``arrays``: a list of ``{name, dtype, shape, offset, nbytes}``
with offsets relative to the end of the header.  Writing is deterministic, so
identical models produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import CheckpointError
from .geometry import PointCloud
from .hypersphere import Hypersphere
from .nn import Adam, NetworkConfig, TravNet
from .voxel import GridConfig, PillarTensor, voxelize

MAGIC = b"HTCK"
VERSION = 1


@dataclass
class CellPrediction:
    """Per-cell network outputs for one scan; rows follow ``cells`` (flat ids)."""

    cells: np.ndarray
    z: np.ndarray
    t: np.ndarray
    grid: GridConfig

    def distances(self, sphere: Hypersphere) -> np.ndarray:
        return sphere.distances(self.z)


@dataclass
class TrainedModel:
    net: TravNet
    sphere: Hypersphere
    grid: GridConfig
    train_config: dict = field(default_factory=dict)
    best_epoch: int = 0
    optimizer: Adam | None = None

    @property
    def network_config(self) -> NetworkConfig:
        return self.net.config

    def predict_pillars(self, pillars: list[PillarTensor], batch_size: int = 12) -> list[CellPrediction]:
        """Eval-mode latents and scores for every occupied cell of each scan."""
        was_training = self.net.training
        self.net.eval()
        out = []
        try:
            for start in range(0, len(pillars), batch_size):
                chunk = pillars[start:start + batch_size]
                q = self.net.pillar_encoder_forward(chunk)
                h, w = chunk[0].grid.shape
                flat_q = q.data.reshape(-1, q.shape[-1])
                occ = [np.flatnonzero(p.counts.reshape(-1) > 0) for p in chunk]
                rows = np.concatenate([o + b * h * w for b, o in enumerate(occ)])
                head = self.net.head_forward(Tensor(flat_q[rows]))
                offset = 0
                for p, o in zip(chunk, occ):
                    sl = slice(offset, offset + o.size)
                    out.append(CellPrediction(o, head.z.data[sl].astype(np.float64),
                                              head.t.data[sl, 0].astype(np.float64), p.grid))
                    offset += o.size
        finally:
            self.net.training = was_training
        return out

    def predict_clouds(self, clouds: list[PointCloud], grid: GridConfig | None = None,
                       seed: int = 0) -> list[CellPrediction]:
        grid = grid or self.grid
        return self.predict_pillars([voxelize(c, grid, seed) for c in clouds])


# --- checkpoint container ---------------------------------------------------

def _grid_to_dict(grid: GridConfig) -> dict:
    return {
        "height_cells": grid.height_cells,
        "width_cells": grid.width_cells,
        "resolution": grid.resolution,
        "origin": list(grid.origin),
        "max_points": grid.max_points,
        "z_range": None if grid.z_range is None else list(grid.z_range),
    }


def grid_from_dict(d: dict) -> GridConfig:
    z_range = d.get("z_range")
    return GridConfig(int(d["height_cells"]), int(d["width_cells"]), float(d["resolution"]),
                      tuple(d["origin"]), int(d["max_points"]),
                      None if z_range is None else tuple(z_range))


def write_container(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    index = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    base = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header["meta"], arrays


def save_checkpoint(model: TrainedModel, path: str | Path) -> None:
    arrays = dict(model.net.state_arrays())
    arrays["sphere/center"] = model.sphere.center
    meta = {
        "network": model.net.config.to_dict(),
        "grid": _grid_to_dict(model.grid),
        "train_config": model.train_config,
        "best_epoch": model.best_epoch,
        "sphere": {"radius": model.sphere.radius, "momentum": model.sphere.momentum,
                   "update_period": model.sphere.update_period},
    }
    opt = model.optimizer
    if opt is not None:
        arrays.update(opt.state_arrays())
        meta["adam"] = {"step": opt.step_count, "lr": opt.lr, "beta1": opt.beta1,
                        "beta2": opt.beta2, "eps": opt.eps}
    write_container(path, meta, arrays)


def load_checkpoint(path: str | Path) -> TrainedModel:
    meta, arrays = read_container(path)
    try:
        net = TravNet(NetworkConfig(**meta["network"]))
        net.load_state_arrays(arrays)
        s = meta["sphere"]
        sphere = Hypersphere(arrays["sphere/center"], s["radius"], s["momentum"], s["update_period"])
        grid = grid_from_dict(meta["grid"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: incompatible checkpoint contents ({exc})") from exc
    net.eval()
    opt = None
    if "adam" in meta:
        a = meta["adam"]
        opt = Adam(net.params, a["lr"], a["beta1"], a["beta2"], a["eps"])
        opt.load_state_arrays(arrays, a["step"])
    return TrainedModel(net, sphere, grid, meta.get("train_config", {}), meta.get("best_epoch", 0), opt)
