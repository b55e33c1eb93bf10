"""Run configuration: a JSON document validated against a strict schema.

Every section is optional; missing values take the defaults below.  Unknown
keys anywhere are rejected so that typos cannot silently fall back to a
default.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .dataset import DatasetSpec, RouteSpec, default_routes, split_count
from .errors import SpecError
from .geometry import AugmentPolicy, RansacConfig
from .losses import LossMode
from .nn import NetworkConfig
from .supervision import ScoreParams
from .synth import WorldSpec
from .trainer import TrainConfig
from .voxel import GridConfig

DEFAULTS: dict = {
    "seed": 0,
    "grid": {"size": [12.0, 12.0], "resolution": 0.15, "max_points": 32},
    "world": {
        "extent": [48.0, 48.0], "ground_noise": 0.01, "density": 150.0,
        "tilt_deg": 0.0, "tilt_direction_deg": 90.0, "n_slopes": 0,
        "furrow_amplitude": 0.04, "furrow_period": 0.6, "furrow_direction_deg": 90.0,
        "n_rocks": 400, "n_low_bushes": 400, "n_high_bushes": 300, "n_trees": 80,
        "corridor_width": 2.0, "obstacle_gap": -0.2,
    },
    "dataset": {
        "profile": "wheeled", "window": 50, "stride": 4, "dt": 0.2,
        "n_train_scans": 40, "n_test_scans": 12,
        "train_routes": None, "test_routes": None,
    },
    "score": {"eta": 2.0, "v_th": 0.25, "constant_tau": None},
    "train": {
        "lr": 5e-4, "batch_size": 12, "epochs": 100, "k": 5, "momentum": 0.5,
        "zeta": 1e-6, "weights": {"anomaly": 1.0, "recon": 1.0, "regression": 20.0},
        "loss_mode": "full", "split": [0.8, 0.2],
    },
    "augment": {
        "flip": True, "yaw": True, "pitch": True, "flip_prob": 0.5,
        "yaw_range_deg": [-90.0, 90.0], "pitch_slope_gate_deg": 10.0,
        "ransac": {"iterations": 200, "inlier_dist": 0.05, "min_inlier_frac": 0.6},
    },
    "network": {
        "cell_feat_dim": 32, "latent_dim": 8, "encoder_hidden": 16, "recon_hidden": 16,
        "dropout_rate": 0.1, "backbone_convs": 2, "bn_momentum": 0.9, "bn_eps": 1e-5,
    },
    "map": {"size": [8.0, 8.0], "resolution": 0.15, "threshold": 0.5, "anomaly_override": False},
}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_count = {"type": "integer", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_pospair = {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}
_route = {"type": "array", "items": _pair, "minItems": 2}
_routes = {"anyOf": [{"type": "null"}, {"type": "array", "items": _route, "minItems": 1}]}
_prob = {"type": "number", "minimum": 0, "maximum": 1}

SCHEMA: dict = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "grid": _obj({"size": _pospair, "resolution": _pos, "max_points": _posint}),
    "world": _obj({
        "extent": _pospair, "ground_noise": _nonneg, "density": _pos,
        "tilt_deg": {"type": "number", "minimum": -25, "maximum": 25},
        "tilt_direction_deg": _num, "furrow_amplitude": _nonneg, "furrow_period": _pos,
        "furrow_direction_deg": _num, "n_slopes": _count, "n_rocks": _count,
        "n_low_bushes": _count, "n_high_bushes": _count, "n_trees": _count,
        "corridor_width": _nonneg, "obstacle_gap": _num,
    }),
    "dataset": _obj({
        "profile": {"enum": ["wheeled", "legged"]}, "window": _posint, "stride": _posint,
        "dt": _pos, "n_train_scans": _posint, "n_test_scans": _count,
        "train_routes": _routes, "test_routes": _routes,
    }),
    "score": _obj({"eta": _pos, "v_th": _nonneg,
                   "constant_tau": {"anyOf": [{"type": "null"}, _prob]}}),
    "train": _obj({
        "lr": _pos, "batch_size": _posint, "epochs": _posint, "k": _posint,
        "momentum": _prob, "zeta": _pos,
        "weights": _obj({"anomaly": _nonneg, "recon": _nonneg, "regression": _nonneg}),
        "loss_mode": {"enum": ["none", "all_unlabeled", "all-unlabeled", "anomalous_only",
                               "anomalous-only", "normal_anomalous", "full"]},
        "split": {"type": "array", "items": _prob, "minItems": 2, "maxItems": 2},
    }),
    "augment": _obj({
        "flip": {"type": "boolean"}, "yaw": {"type": "boolean"}, "pitch": {"type": "boolean"},
        "flip_prob": _prob,
        "yaw_range_deg": {"type": "array", "items": {"type": "number", "minimum": -180, "maximum": 180},
                          "minItems": 2, "maxItems": 2},
        "pitch_slope_gate_deg": {"type": "number", "minimum": 0, "maximum": 90},
        "ransac": _obj({"iterations": _posint, "inlier_dist": _pos, "min_inlier_frac": _prob}),
    }),
    "network": _obj({
        "cell_feat_dim": _posint, "latent_dim": _posint, "encoder_hidden": _posint,
        "recon_hidden": _posint, "dropout_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "backbone_convs": _count, "bn_momentum": _prob, "bn_eps": _pos,
    }),
    "map": _obj({"size": _pospair, "resolution": _pos, "threshold": _prob,
                 "anomaly_override": {"type": "boolean"}}),
})


class ConfigError(SpecError):
    """Configuration rejected by the schema or by a consistency check."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate(doc: dict) -> None:
    """Raise ConfigError naming the offending key on any schema violation."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {err.message}")


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, doc: dict | None = None) -> RunConfig:
        doc = doc or {}
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        validate(doc)
        merged = _merge(DEFAULTS, doc)
        validate(merged)
        split = merged["train"]["split"]
        if abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError("invalid config at train.split: fractions must sum to 1")
        lo, hi = merged["augment"]["yaw_range_deg"]
        if lo > hi:
            raise ConfigError("invalid config at augment.yaw_range_deg: range must be ordered")
        return cls(merged)

    @classmethod
    def load(cls, path: str | Path | None) -> RunConfig:
        if path is None:
            return cls.from_dict({})
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def with_overrides(self, overrides: dict) -> RunConfig:
        return RunConfig.from_dict(_merge(self.data, overrides))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    # --- builders -----------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def grid(self) -> GridConfig:
        g = self.data["grid"]
        return GridConfig.centered(g["size"][0], g["size"][1], g["resolution"], g["max_points"])

    def map_grid(self) -> GridConfig:
        m = self.data["map"]
        return GridConfig.centered(m["size"][0], m["size"][1], m["resolution"],
                                   self.data["grid"]["max_points"])

    def routes(self) -> tuple[tuple[RouteSpec, ...], tuple[RouteSpec, ...]]:
        d = self.data["dataset"]
        extent = tuple(self.data["world"]["extent"])
        train, test = default_routes(extent, d["n_train_scans"], d["n_test_scans"], self.seed)
        if d["train_routes"] is not None:
            counts = split_count(d["n_train_scans"], len(d["train_routes"]))
            train = tuple(RouteSpec(tuple(map(tuple, r)), n, self.seed + i)
                          for i, (r, n) in enumerate(zip(d["train_routes"], counts)) if n)
        if d["test_routes"] is not None:
            counts = split_count(d["n_test_scans"], len(d["test_routes"]))
            test = tuple(RouteSpec(tuple(map(tuple, r)), n, self.seed + 100 + i)
                         for i, (r, n) in enumerate(zip(d["test_routes"], counts)) if n)
        if d["n_test_scans"] == 0:
            test = ()
        return train, test

    def world_spec(self) -> WorldSpec:
        w = self.data["world"]
        train, test = self.routes()
        return WorldSpec(
            extent=tuple(w["extent"]), ground_noise=w["ground_noise"], density=w["density"],
            tilt=math.radians(w["tilt_deg"]), tilt_direction=math.radians(w["tilt_direction_deg"]),
            furrow_amplitude=w["furrow_amplitude"], furrow_period=w["furrow_period"],
            furrow_direction=math.radians(w["furrow_direction_deg"]),
            n_slopes=w["n_slopes"], n_rocks=w["n_rocks"], n_low_bushes=w["n_low_bushes"],
            n_high_bushes=w["n_high_bushes"], n_trees=w["n_trees"],
            corridors=tuple(r.waypoints for r in train + test),
            corridor_width=w["corridor_width"], obstacle_gap=w["obstacle_gap"], seed=self.seed)

    def score(self) -> ScoreParams:
        s = self.data["score"]
        return ScoreParams(s["eta"], s["v_th"], s["constant_tau"])

    def dataset_spec(self) -> DatasetSpec:
        d = self.data["dataset"]
        train, test = self.routes()
        return DatasetSpec(world=self.world_spec(), profile=d["profile"], grid=self.grid(),
                           score=self.score(), window=d["window"], stride=d["stride"], dt=d["dt"],
                           train_routes=train, test_routes=test)

    def augment_policy(self) -> AugmentPolicy | None:
        a = self.data["augment"]
        if not (a["flip"] or a["yaw"] or a["pitch"]):
            return None
        r = a["ransac"]
        yaw = tuple(math.radians(v) for v in a["yaw_range_deg"]) if a["yaw"] else (0.0, 0.0)
        return AugmentPolicy(
            flip_prob=a["flip_prob"] if a["flip"] else 0.0, yaw_range=yaw,
            pitch_enabled=a["pitch"], pitch_slope_gate=math.radians(a["pitch_slope_gate_deg"]),
            seed=self.seed,
            ransac=RansacConfig(r["iterations"], r["inlier_dist"], r["min_inlier_frac"], self.seed))

    def train_config(self) -> TrainConfig:
        t = self.data["train"]
        w = t["weights"]
        return TrainConfig(lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"], k=t["k"],
                           momentum=t["momentum"], zeta=t["zeta"],
                           weights=(w["anomaly"], w["recon"], w["regression"]),
                           loss_mode=LossMode.parse(t["loss_mode"]), augment=self.augment_policy(),
                           seed=self.seed, split=tuple(t["split"]))

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(**self.data["network"])
