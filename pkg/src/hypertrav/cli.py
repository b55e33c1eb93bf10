"""Command-line entry point: ``hypertrav gen|train|eval|map``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig
from .dataset import build_dataset, load_dataset, save_dataset
from .errors import (CheckpointError, DataError, HyperTravError, MissingLabels, NoPathError,
                     NumericFailure, ShapeMismatch, SpecError, TooFewSamples)
from .evaluator import aggregate, predict_grid, score, write_metrics_csv, write_summary_json
from .geometry import read_cloud
from .mapper import infer_map, to_costmap, write_costmap, write_map_csv
from .model import load_checkpoint, save_checkpoint
from .trainer import fit, write_training_log
from .voxel import GridConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("hypertrav")

_GRID_RE = re.compile(r"^\s*([0-9.]+)\s*x\s*([0-9.]+)\s*:\s*([0-9.]+)\s*$")


def parse_grid(text: str) -> tuple[float, float, float]:
    """``"8x8:0.15"`` -> (8.0, 8.0, 0.15)."""
    m = _GRID_RE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"grid must look like 8x8:0.15, got {text!r}")
    sx, sy, res = (float(v) for v in m.groups())
    if sx <= 0 or sy <= 0 or res <= 0:
        raise argparse.ArgumentTypeError("grid size and resolution must be positive")
    return sx, sy, res


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        over.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "loss_mode", None) is not None:
        over.setdefault("train", {})["loss_mode"] = args.loss_mode
    for flag in ("flip", "yaw", "pitch"):
        if getattr(args, f"no_{flag}", False):
            over.setdefault("augment", {})[flag] = False
    if getattr(args, "threshold", None) is not None:
        over.setdefault("map", {})["threshold"] = args.threshold
    if getattr(args, "grid", None) is not None:
        sx, sy, res = args.grid
        over.setdefault("map", {}).update({"size": [sx, sy], "resolution": res})
    if getattr(args, "anomaly_override", False):
        over.setdefault("map", {})["anomaly_override"] = True
    return cfg.with_overrides(over) if over else cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, world = build_dataset(cfg.dataset_spec())
    save_dataset(ds, out, world if args.world else None)
    cfg.dump(out / "config.json")
    n_train = sum(r.split == "train" for r in ds.scans)
    print(f"wrote {len(ds.scans)} scans ({n_train} train, {len(ds.scans) - n_train} test) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = load_dataset(args.data)
    samples = ds.samples("train")
    if not samples:
        raise DataError(f"{args.data} has no training scans")
    if samples[0].grid.shape != cfg.grid().shape:
        log.info("using the dataset grid %s", samples[0].grid.shape)
    result = fit(samples, cfg.train_config(), cfg.network_config())
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, ckpt)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.csv")
    write_training_log(result.history, log_path)
    cfg.dump(ckpt.with_suffix(".config.json"))
    print(f"best epoch {result.model.best_epoch}; checkpoint {ckpt}; log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    split = None if args.split == "all" else args.split
    samples = ds.samples(split)
    if not samples:
        raise DataError(f"no {args.split} scans in {args.data}")
    rows = []
    for s in samples:
        if not s.labeled:
            raise MissingLabels(f"scan {s.scan_id} has no class labels")
        if s.grid.shape != model.grid.shape:
            log.info("scan grid %s differs from the training grid %s", s.grid.shape, model.grid.shape)
        rows.append((s.scan_id, score(predict_grid(model, s.cloud, s.grid), s.truth())))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out / "metrics.csv")
    per_scan = [m for _, m in rows]
    summary = {"checkpoint": Path(args.checkpoint).name, "split": args.split, "n_scans": len(rows),
               "micro": aggregate(per_scan).to_dict()}
    if args.macro:
        summary["macro"] = aggregate(per_scan, macro=True).to_dict()
    write_summary_json(summary, out / "summary.json")
    m = summary["micro"]
    print(f"micro precision={m['precision']:.4f} recall={m['recall']:.4f} f1={m['f1']:.4f}")
    if args.macro:
        m = summary["macro"]
        print(f"macro precision={m['precision']:.4f} recall={m['recall']:.4f} f1={m['f1']:.4f}")
    return EXIT_OK


def cmd_map(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    try:
        cloud = read_cloud(args.cloud)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read cloud {args.cloud}: {exc}") from exc
    grid: GridConfig = cfg.map_grid()
    m = cfg.data["map"]
    tmap = infer_map(model, cloud, grid, anomaly_override=m["anomaly_override"])
    costmap = to_costmap(tmap, m["threshold"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_map_csv(tmap, out / "traversability.csv")
    write_costmap(costmap, out / "costmap.pgm", out / "costmap.yaml")
    cfg.dump(out / "config.json")
    known = int((~tmap.unknown).sum())
    print(f"mapped {known} known cells of {grid.height_cells}x{grid.width_cells} to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypertrav", description="Traversability learning from robot experience.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", help="run config JSON (defaults apply when omitted)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--world", action="store_true", help="also write the full world cloud")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on a dataset")
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log CSV (default: next to the checkpoint)")
    t.add_argument("--seed", type=int, help="override the config seed")
    t.add_argument("--epochs", type=int, help="override the number of epochs")
    t.add_argument("--loss-mode", choices=["none", "all-unlabeled", "anomalous-only", "full"],
                   help="treatment of unlabeled cells in the anomaly loss (default full)")
    t.add_argument("--no-flip", action="store_true", help="disable flipping")
    t.add_argument("--no-yaw", action="store_true", help="disable yaw rotation")
    t.add_argument("--no-pitch", action="store_true", help="disable pitch rotation")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint against labeled scans")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="output directory for metrics.csv and summary.json")
    e.add_argument("--split", choices=["test", "train", "all"], default="test")
    e.add_argument("--macro", action="store_true", help="also report macro-averaged metrics")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("map", help="traversability map and costmap for one cloud")
    m.add_argument("--config", help="run config JSON")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--cloud", required=True, help="PLY or GSPC point cloud in the robot frame")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--threshold", type=float, help="free/occupied threshold (default 0.5)")
    m.add_argument("--grid", type=parse_grid, help="map extent and resolution, e.g. 8x8:0.15")
    m.add_argument("--anomaly-override", action="store_true",
                   help="force cells outside the hypersphere to score 0")
    m.set_defaults(func=cmd_map)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except (ConfigError, SpecError, NoPathError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, MissingLabels, CheckpointError, ShapeMismatch, TooFewSamples,
            HyperTravError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
