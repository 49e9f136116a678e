"""Stratified shape-estimation metrics, ablations, baseline comparison and latency.

Every sample lands in one (length class, lane) cell chosen from its label.
Cells with no samples are reported as absent, not as zeros. Sums use
``math.fsum`` so the report does not depend on sample order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import DegenerateArea, EmptyDataset
from .geometry import ParallelogramState
from .graph import drop_sources
from .simulator import lane_of

PARAMS = ("rf_x", "rf_y", "l", "w", "theta", "theta_star", "v_x", "v_y")
# parameters that get a relative error column
REL_PARAMS = ("rf_x", "rf_y", "l", "w", "theta_star", "v_x")
CORNER_KEYS = ("cp_x", "cp_y", "fp_x", "fp_y")
LENGTH_CLASSES = ("l1", "l2", "OTHER")
LANES = ("EL", "LL", "RL", "OTHER")
ANGLE_PERIOD = {"theta": 2 * math.pi, "theta_star": math.pi}
REPORT_SCHEMA = "leo-eval-report"
REPORT_VERSION = 1


def length_class(l: float) -> str:
    if 3.0 <= l <= 10.0:
        return "l1"
    if l > 10.0:
        return "l2"
    return "OTHER"


def stratify(label: ParallelogramState) -> tuple[str, str]:
    """(length class, lane) of a label; lane comes from the centroid's lateral position."""
    return length_class(label.l), lane_of(float(label.centroid[1])).value


def _angle_error(d: float, period: float) -> float:
    d = (d + period / 2) % period - period / 2
    return abs(d)


def sample_errors(pred: ParallelogramState, label: ParallelogramState) -> dict:
    """Per-sample absolute errors, overlap metrics and corner errors."""
    p, y = pred.as_array(), label.as_array()
    out = {}
    for i, name in enumerate(PARAMS):
        d = float(p[i] - y[i])
        out[name] = _angle_error(d, ANGLE_PERIOD[name]) if name in ANGLE_PERIOD else abs(d)
    pp, yp = geo.state_to_polygon(pred), geo.state_to_polygon(label)
    try:
        _, out["giou"], out["diou"] = geo.overlap_metrics(pp, yp)
    except DegenerateArea:
        out["giou"] = out["diou"] = -1.0  # worst value for a collapsed prediction
    (pc, pf), (yc, yf) = geo.closest_farthest_corners(pp), geo.closest_farthest_corners(yp)
    out["cp_x"], out["cp_y"] = abs(pc[0] - yc[0]), abs(pc[1] - yc[1])
    out["fp_x"], out["fp_y"] = abs(pf[0] - yf[0]), abs(pf[1] - yf[1])
    out["range"] = float(np.hypot(*label.centroid))
    out["rf_err"] = float(np.hypot(p[0] - y[0], p[1] - y[1]))
    return out


def _aggregate(samples: list[dict], labels: list[ParallelogramState]) -> dict:
    n = len(samples)
    if n == 0:
        return {"n": 0, "absent": True}

    def mean(key):
        return math.fsum(s[key] for s in samples) / n

    row = {"n": n, "giou": mean("giou"), "diou": mean("diou")}
    row["mae"] = {k: mean(k) for k in PARAMS}
    rel = {}
    for k in REL_PARAMS:
        denom = math.fsum(abs(getattr(l, k)) for l in labels) / n
        rel[k] = row["mae"][k] / denom if denom > 0 else None
    row["rel_error"] = rel
    row["corners"] = {k: mean(k) for k in CORNER_KEYS}
    return row


@dataclass
class EvalReport:
    rows: dict  # "length/lane" -> aggregated metrics, plus "length/ALL" and "ALL/ALL"
    counts: dict
    config: dict = field(default_factory=dict)
    latency: dict | None = None
    samples: list = field(default_factory=list, repr=False)

    @property
    def total(self) -> int:
        return self.rows["ALL/ALL"]["n"]

    def row(self, length: str = "ALL", lane: str = "ALL") -> dict:
        return self.rows[f"{length}/{lane}"]

    def to_dict(self) -> dict:
        d = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION, "rows": self.rows,
             "counts": self.counts, "config": self.config}
        if self.latency is not None:
            d["latency"] = self.latency
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = (["stratum", "n", "giou", "diou"] + [f"mae_{k}" for k in PARAMS]
                + [f"rel_{k}" for k in REL_PARAMS] + [f"mae_{k}" for k in CORNER_KEYS])
        w.writerow(cols)
        for key in sorted(self.rows):
            r = self.rows[key]
            if r.get("absent"):
                w.writerow([key, 0] + ["absent"] * (len(cols) - 2))
                continue
            rel = [("" if r["rel_error"][k] is None else repr(r["rel_error"][k])) for k in REL_PARAMS]
            w.writerow([key, r["n"], repr(r["giou"]), repr(r["diou"])]
                       + [repr(r["mae"][k]) for k in PARAMS] + rel
                       + [repr(r["corners"][k]) for k in CORNER_KEYS])
        return buf.getvalue()

    def write_plots(self, out_dir) -> list[Path]:
        """SVG scatter plots of RF and length error against target range."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        plt.rcParams["svg.hashsalt"] = "leo"
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rng = np.array([s["range"] for s in self.samples])
        paths = []
        for key, ylabel in (("rf_err", "reference point error [m]"), ("l", "length error [m]")):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.scatter(rng, [s[key] for s in self.samples], s=4)
            ax.set_xlabel("range to target centroid [m]")
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
            p = out_dir / f"{key}_vs_range.svg"
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
        return paths


def report_from_pairs(preds, labels, config: dict | None = None) -> EvalReport:
    """Aggregate prediction/label state pairs into a stratified report."""
    preds, labels = list(preds), list(labels)
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    cells: dict[tuple[str, str], list[int]] = {}
    samples = []
    for i, (p, y) in enumerate(zip(preds, labels)):
        s = sample_errors(p, y)
        s["stratum"] = stratify(y)
        samples.append(s)
        cells.setdefault(s["stratum"], []).append(i)

    def agg(idx):
        return _aggregate([samples[i] for i in idx], [labels[i] for i in idx])

    rows, counts = {}, {}
    for lc in LENGTH_CLASSES:
        for lane in LANES:
            idx = cells.get((lc, lane), [])
            rows[f"{lc}/{lane}"] = agg(idx)
            counts[f"{lc}/{lane}"] = len(idx)
        rows[f"{lc}/ALL"] = agg([i for (c, _), v in cells.items() if c == lc for i in v])
    for lane in LANES:
        rows[f"ALL/{lane}"] = agg([i for (_, ln), v in cells.items() if ln == lane for i in v])
    rows["ALL/ALL"] = agg(range(len(samples)))
    return EvalReport(rows, counts, dict(config or {}), None, samples)


def evaluate(model, graphs, drop_sensors=(), no_inter_attention: bool = False,
             config: dict | None = None) -> EvalReport:
    """Run the model in eval mode on labelled graphs, with optional ablations."""
    graphs = [g for g in graphs if g.target is not None]
    if not graphs:
        raise EmptyDataset("no labelled graphs to evaluate")
    drop_sensors = sorted({getattr(s, "value", s) for s in drop_sensors})
    if drop_sensors:
        graphs = [drop_sources(g, drop_sensors) for g in graphs]
    kw = {"lam_override": 1.0} if no_inter_attention else {}
    preds = model.predict_graphs(graphs, **kw)
    echo = {"mode": "model", "drop_sensors": drop_sensors, "no_inter_attention": bool(no_inter_attention),
            "model": dict(vars(model.config))}
    echo.update(config or {})
    return report_from_pairs([ParallelogramState.from_array(p) for p in preds],
                             [g.target for g in graphs], echo)


def compare_baseline(frames, config: dict | None = None) -> EvalReport:
    """Score the geometric fusion labels stored in ``frames`` against ground truth."""
    frames = list(frames)
    pairs = [(f.fused_label.state, f.truth) for f in frames if f.fused_label is not None]
    if not pairs:
        raise EmptyDataset("no frames carry fused labels")
    echo = {"mode": "geometric_baseline", "frames": len(frames), "labelled_frames": len(pairs)}
    echo.update(config or {})
    return report_from_pairs([p for p, _ in pairs], [y for _, y in pairs], echo)


def measure_latency(model, graphs, iterations: int = 100, warmup: int = 10, batch: int = 128) -> dict:
    """Per-graph eval forward timings (warm-up iterations dropped) and batch throughput."""
    graphs = list(graphs)
    if not graphs:
        raise EmptyDataset("no graphs to time")
    x = model.inputs(graphs)
    times = []
    for i in range(warmup + iterations):
        xi = x[i % len(x)][None]
        t = time.perf_counter()
        model.predict(xi)
        if i >= warmup:
            times.append(time.perf_counter() - t)
    xb = np.resize(x, (batch,) + x.shape[1:])
    model.predict(xb)
    t = time.perf_counter()
    model.predict(xb)
    dt = time.perf_counter() - t
    ms = np.array(times) * 1e3
    return {"single_mean_ms": float(ms.mean()), "single_p95_ms": float(np.percentile(ms, 95)),
            "iterations": iterations, "warmup_dropped": warmup, "batch": batch,
            "batch_ms": dt * 1e3, "batch_graphs_per_s": batch / dt}
