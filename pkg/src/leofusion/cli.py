"""Command-line entry point: simulate, label, train, eval, bench, version.

Exit codes: 0 success, 2 usage or configuration error, 3 data or schema
error, 4 numerical abort. Every run writes ``<out>.manifest.json`` with the
resolved config, input and output hashes and package versions.
"""
from __future__ import annotations

import os

# must happen before numpy loads its BLAS
if os.environ.get("LEO_THREADS", "").strip().isdigit() and int(os.environ["LEO_THREADS"]) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["LEO_THREADS"])

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import simulator as sim
from . import training as tr
from .config import RunConfig
from .errors import (DegenerateArea, EmptyInput, InvalidConfig, LeoError, NonFiniteLoss, SchemaMismatch,
                     SingularCovariance)
from .fusion import SensorId, fuse_tracks
from .gat import CHECKPOINT_VERSION, Model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    return {"leofusion": __version__, "dataset_schema": sim.SCHEMA_VERSION,
            "checkpoint_schema": CHECKPOINT_VERSION, "report_schema": ev.REPORT_VERSION,
            "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, config: RunConfig | None, inputs: dict, outputs: list,
                   extra: dict | None = None) -> Path:
    body = {
        "command": command,
        "config": config.to_dict() if config else None,
        "config_sha256": config.digest() if config else None,
        "inputs": {k: {"path": str(v), "sha256": file_sha256(v)} for k, v in sorted(inputs.items())},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "versions": _versions(),
    }
    body.update(extra or {})
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(body, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return RunConfig.load(path)


def _dataset(path):
    if not Path(path).is_file():
        raise UsageError(f"dataset not found: {path}")
    return sim.read_dataset(path)


# --- subcommands -------------------------------------------------------------


def cmd_simulate(a) -> int:
    cfg = _config(a.config)
    s = cfg.simulator
    scenarios = sim.make_configs(s.kinds, s.scenarios_per_kind, s.duration, cfg.seed,
                                 noise_scale=s.noise_scale, motion_scale=s.motion_scale,
                                 sensor_dropout_prob=s.sensor_dropout_prob)
    frames = [f for c in scenarios for f in sim.generate_scenario(c)]
    out = Path(a.out)
    sim.write_dataset(frames, out)
    write_manifest(out, "simulate", cfg, {"config": a.config}, [out],
                   {"frames": len(frames), "scenarios": [c.scenario_id for c in scenarios]})
    print(f"wrote {len(frames)} frames from {len(scenarios)} scenarios to {out}")
    return EXIT_OK


def cmd_label(a) -> int:
    cfg = _config(a.config)
    frames = _dataset(a.data)
    out_frames, n = [], 0
    for f in frames:
        label = None
        if f.tracks:
            try:
                label = fuse_tracks(f.tracks, cfg.fusion)
                n += 1
            except (EmptyInput, SingularCovariance, DegenerateArea):
                label = None
        out_frames.append(sim.with_fused_label(f, label))
    out = Path(a.out)
    sim.write_dataset(out_frames, out)
    inputs = {"data": a.data} | ({"config": a.config} if a.config else {})
    write_manifest(out, "label", cfg, inputs, [out], {"labelled_frames": n, "frames": len(frames)})
    print(f"labelled {n} of {len(frames)} frames -> {out}")
    return EXIT_OK


def cmd_train(a) -> int:
    cfg = _config(a.config)
    t = cfg.training
    frames = _dataset(a.data)
    graphs = tr.graphs_from_frames(frames, t.label_source, t.window_stride)
    train_g, val_g = tr.split_by_scenario(graphs, t.val_fraction, cfg.seed)
    out = Path(a.out)
    log = out.with_name(out.name + ".metrics.jsonl")
    res = tr.train(train_g, val_g, cfg.model, t.optim, t.loss, log_path=log)
    res.model.save(out)
    write_manifest(out, "train", cfg, {"data": a.data, "config": a.config}, [out, log],
                   {"train_graphs": len(train_g), "val_graphs": len(val_g), "best_epoch": res.best_epoch,
                    "stopped_early": res.stopped_early})
    last = res.history[-1]
    print(f"trained {len(res.history)} epochs (best {res.best_epoch}); last train loss "
          f"{last['train_loss']:.4f}; checkpoint {out}")
    return EXIT_OK


def _eval_outputs(report: ev.EvalReport, out: Path) -> list[Path]:
    report.write(out)
    csv_path = out.with_suffix(".csv")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    plots = report.write_plots(out.with_name(out.stem + "_plots"))
    return [out, csv_path, *plots]


def cmd_eval(a) -> int:
    cfg = _config(a.config)
    frames = _dataset(a.data)
    out = Path(a.out)
    drop = [s.strip() for s in (a.drop_sensor or "").split(",") if s.strip()] or list(cfg.evaluation.drop_sensors)
    unknown = [s for s in drop if s not in {sid.value for sid in SensorId}]
    if unknown:
        raise UsageError(f"unknown sensor(s): {', '.join(unknown)}")
    inputs = {"data": a.data} | ({"config": a.config} if a.config else {})
    if a.baseline:
        report = ev.compare_baseline(frames)
    else:
        if not a.ckpt:
            raise UsageError("eval needs --ckpt unless --baseline is given")
        if not Path(a.ckpt).is_file():
            raise UsageError(f"checkpoint not found: {a.ckpt}")
        model = Model.load(a.ckpt)
        graphs = tr.graphs_from_frames(frames, "truth", cfg.evaluation.window_stride)
        no_inter = a.no_inter_attention or cfg.evaluation.no_inter_attention
        report = ev.evaluate(model, graphs, drop, no_inter)
        inputs["ckpt"] = a.ckpt
    written = _eval_outputs(report, out)
    write_manifest(out, "eval", cfg, inputs, written)
    row = report.row()
    print(f"{report.total} samples: GIoU {row['giou']:.4f}  DIoU {row['diou']:.4f}  "
          f"RF_x MAE {row['mae']['rf_x']:.4f} m  l MAE {row['mae']['l']:.4f} m -> {out}")
    return EXIT_OK


def cmd_bench(a) -> int:
    cfg = _config(a.config)
    if not Path(a.ckpt).is_file():
        raise UsageError(f"checkpoint not found: {a.ckpt}")
    model = Model.load(a.ckpt)
    if a.data:
        graphs = tr.graphs_from_frames(_dataset(a.data), "truth", 1)
    else:
        c = sim.make_configs(["HIGHWAY_FOLLOW"], 1, 1.0, cfg.seed)[0]
        graphs = tr.graphs_from_frames(sim.generate_scenario(c))
    lat = ev.measure_latency(model, graphs, cfg.evaluation.latency_iterations)
    out = Path(a.out)
    out.write_text(json.dumps(lat, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    inputs = {"ckpt": a.ckpt} | ({"data": a.data} if a.data else {})
    write_manifest(out, "bench", cfg, inputs, [out])
    print(f"single-graph forward {lat['single_mean_ms']:.2f} ms mean, p95 {lat['single_p95_ms']:.2f} ms; "
          f"batch {lat['batch']}: {lat['batch_graphs_per_s']:.1f} graphs/s")
    return EXIT_OK


def cmd_version(a) -> int:
    print(f"leofusion {__version__} (dataset schema {sim.SCHEMA_VERSION}, checkpoint schema {CHECKPOINT_VERSION})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leo", description="Learned multi-sensor object extent fusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic JSONL dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("label", help="attach geometric-fusion labels to a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")

    s = sub.add_parser("train", help="train the graph attention model")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="evaluate a checkpoint (or the geometric baseline)")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--drop-sensor", help="comma-separated sensors to remove, e.g. LRR,SMPC")
    s.add_argument("--no-inter-attention", action="store_true")
    s.add_argument("--baseline", action="store_true", help="score stored fused labels instead of a model")
    s.add_argument("--config")

    s = sub.add_parser("bench", help="measure inference latency")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--data")
    s.add_argument("--config")

    sub.add_parser("version", help="print package and schema versions")
    return p


COMMANDS = {"simulate": cmd_simulate, "label": cmd_label, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "version": cmd_version}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidConfig) as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, SingularCovariance, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaMismatch, LeoError, OSError, ValueError) as e:
        print(f"data error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
