"""Composite loss, Adam optimisation, plateau decay and early stopping."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tape, Tensor
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss
from .gat import LabelStats, Model, ModelConfig
from .graph import FusionGraph, build_graph, compute_stats, recenter, windows

ANGLE_PERIODS = {4: 2 * math.pi, 5: math.pi}  # theta, theta*


@dataclass(frozen=True)
class LossConfig:
    beta_weights: tuple = (1.0,) * 8
    smooth_l1_beta: float = 1.0
    alpha: float = 0.5
    lambda_iou: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "beta_weights", tuple(float(b) for b in self.beta_weights))
        if len(self.beta_weights) != 8 or min(self.beta_weights) < 0:
            raise InvalidConfig("beta_weights must be 8 non-negative numbers")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfig("alpha must lie in [0, 1]")
        if self.smooth_l1_beta <= 0 or self.lambda_iou < 0:
            raise InvalidConfig("smooth_l1_beta must be positive and lambda_iou non-negative")


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 1e-3
    plateau_factor: float = 0.75
    plateau_patience: int = 2
    clip_norm: float = 3.0
    batch: int = 128
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise InvalidConfig("plateau_factor must lie in (0, 1)")
        for name in ("lr0", "clip_norm", "batch", "max_epochs", "plateau_patience", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")


# --- losses ------------------------------------------------------------------


def wrapped_difference(pred, label) -> Tensor:
    """pred - label with angle components wrapped (theta to (-pi, pi], theta* to (-pi/2, pi/2])."""
    pred = ad.as_tensor(pred)
    label = np.asarray(label, float)
    d = pred.value - label
    shift = np.zeros_like(d)
    for i, period in ANGLE_PERIODS.items():
        di = d[..., i]
        wrapped = di - period * np.floor(di / period + 0.5)
        wrapped = np.where(wrapped <= -period / 2, wrapped + period, wrapped)
        shift[..., i] = wrapped - di
    return pred - label + shift


def param_loss(pred, label, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum over parameters of beta_i * SmoothL1(wrapped difference); batch mean."""
    d = wrapped_difference(pred, label)
    per = ad.smooth_l1(d, cfg.smooth_l1_beta) * np.asarray(cfg.beta_weights)
    per_sample = per.sum(axis=-1)
    return per_sample.mean() if per_sample.ndim else per_sample


def _label_polygon(label):
    return geo.state_to_polygon(geo.ParallelogramState.from_array(np.asarray(label, float)))


def iou_terms(pred, labels):
    """Per-sample (giou, diou) values and their gradients w.r.t. the 8 predicted parameters."""
    pv = np.atleast_2d(np.asarray(pred, float))
    lv = np.atleast_2d(np.asarray(labels, float))
    vals = np.zeros((len(pv), 2))
    grads = np.zeros((len(pv), 2, 8))
    for b in range(len(pv)):
        _, (g, gg), (d, dg) = geo.overlap_with_grad(pv[b, :6], _label_polygon(lv[b]))
        vals[b] = (g, d)
        grads[b, 0, :6], grads[b, 1, :6] = gg, dg
    return vals, grads


def iou_loss(pred, label, cfg: LossConfig = LossConfig()) -> Tensor:
    """alpha * (1 - GIoU) + (1 - alpha) * (1 - DIoU), batch mean, as a differentiable op."""
    pred = ad.as_tensor(pred)
    single = pred.ndim == 1
    vals, grads = iou_terms(pred.value, label)
    a = cfg.alpha
    per = a * (1.0 - vals[:, 0]) + (1.0 - a) * (1.0 - vals[:, 1])
    n = len(per)
    dper = -(a * grads[:, 0] + (1.0 - a) * grads[:, 1]) / n

    def pullback(g):
        out = g * dper
        return (out[0] if single else out,)

    return ad.custom_op(np.array(per.mean()), (pred,), pullback)


def total_loss(pred, label, cfg: LossConfig = LossConfig()) -> Tensor:
    loss = param_loss(pred, label, cfg)
    if cfg.lambda_iou > 0:
        loss = loss + iou_loss(pred, label, cfg) * cfg.lambda_iou
    return loss


# --- optimiser ---------------------------------------------------------------


def global_norm(grads: dict) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.best = math.inf
        self.bad = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best, self.bad = metric, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


# --- data --------------------------------------------------------------------


def label_of(frame, source: str = "truth"):
    if source == "truth":
        return frame.truth
    if source == "fused":
        return None if frame.fused_label is None else frame.fused_label.state
    raise InvalidConfig(f"unknown label source {source!r}")


def graphs_from_frames(frames, label_source: str = "truth", stride: int = 1) -> list[FusionGraph]:
    """One graph per 6-frame window, per scenario, labelled at the newest frame."""
    by_scenario: dict[str, list] = {}
    for f in frames:
        by_scenario.setdefault(f.scenario_id, []).append(f)
    out = []
    for sid in sorted(by_scenario):
        seq = sorted(by_scenario[sid], key=lambda f: f.fusion_timestamp)
        for w in windows(seq, stride):
            label = label_of(w[-1], label_source)
            if label is None:
                continue
            out.append(build_graph(w, label))
    return out


def split_by_scenario(graphs, val_fraction: float = 0.2, seed: int = 0):
    """Deterministic train/val split on scenario ids (never by frame)."""
    ids = sorted({g.scenario_id for g in graphs})
    rank = sorted(ids, key=lambda s: (zlib.crc32(f"{seed}:{s}".encode()), s))
    n_val = int(round(val_fraction * len(ids)))
    if len(ids) > 1:
        n_val = min(max(n_val, 1), len(ids) - 1)
    else:
        n_val = 0
    val_ids = set(rank[:n_val])
    return ([g for g in graphs if g.scenario_id not in val_ids],
            [g for g in graphs if g.scenario_id in val_ids])


def stack(model: Model, graphs) -> tuple[np.ndarray, np.ndarray]:
    """Model inputs and (recentred) targets for a list of labelled graphs."""
    o = model.origins(graphs)
    return model.inputs(graphs, o), model.relative_targets(graphs, o)


def fit_stats(graphs, model_cfg: ModelConfig):
    probe = Model(model_cfg, {})
    o = probe.origins(graphs)
    feats = [replace(g, features=recenter(g.features, oo)) if model_cfg.recenter else g
             for g, oo in zip(graphs, o)]
    fstats = compute_stats(feats)
    lstats = LabelStats.from_labels(list(Model.relative_targets(graphs, o)))
    return fstats, lstats


# --- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0


def evaluate_loss(model: Model, x, y, loss_cfg: LossConfig, batch: int = 256, **fw) -> dict:
    """Eval-mode mean losses and overlap metrics over a stacked set."""
    tot = pl = il = gi = di = 0.0
    for s in range(0, len(x), batch):
        pred = model.decode(model.forward(x[s:s + batch], training=False, **fw)).value
        yy = y[s:s + batch]
        n = len(pred)
        p = param_loss(pred, yy, loss_cfg).value
        vals, _ = iou_terms(pred, yy)
        i = np.mean(loss_cfg.alpha * (1 - vals[:, 0]) + (1 - loss_cfg.alpha) * (1 - vals[:, 1]))
        pl += float(p) * n
        il += float(i) * n
        gi += float(vals[:, 0].sum())
        di += float(vals[:, 1].sum())
    n = max(len(x), 1)
    tot = (pl + loss_cfg.lambda_iou * il) / n
    return {"loss": tot, "param_loss": pl / n, "iou_loss": il / n, "giou": gi / n, "diou": di / n}


def train(train_graphs, val_graphs=None, model_cfg: ModelConfig = ModelConfig(),
          optim: OptimConfig = OptimConfig(), loss_cfg: LossConfig = LossConfig(),
          log_path=None, eval_train_each_epoch: bool = False) -> TrainResult:
    """Fit a model. Without validation graphs the schedule tracks the training loss."""
    train_graphs = list(train_graphs)
    if not train_graphs:
        raise EmptyDataset("no training graphs")
    val_graphs = list(val_graphs or [])
    fstats, lstats = fit_stats(train_graphs, model_cfg)
    model = Model.init(model_cfg, fstats, lstats)
    xt, yt = stack(model, train_graphs)
    xv, yv = stack(model, val_graphs) if val_graphs else (None, None)

    opt = Adam(model.params, optim.lr0, optim.beta1, optim.beta2, optim.eps)
    sched = PlateauSchedule(optim.lr0, optim.plateau_factor, optim.plateau_patience)
    best, best_params, best_epoch, bad = math.inf, dict(model.params), 0, 0
    history, stopped = [], False
    log = Path(log_path).open("w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(1, optim.max_epochs + 1):
            rng = np.random.default_rng(np.random.SeedSequence([optim.seed, epoch]))
            order = rng.permutation(len(xt))
            losses, norms, giou_sum = [], [], 0.0
            for b, s in enumerate(range(0, len(order), optim.batch)):
                idx = order[s:s + optim.batch]
                with Tape() as tape:
                    P = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
                    pred = model.decode(model.forward(xt[idx], training=True, seed=optim.seed,
                                                      step=step, tensors=P))
                    loss = total_loss(pred, yt[idx], loss_cfg)
                val = float(loss.value)
                if not math.isfinite(val):
                    raise NonFiniteLoss(f"epoch {epoch} batch {b}", val)
                grads = tape.backward(loss)
                grads = {k: grads[P[k]] for k in model.params}
                grads, norm = clip_by_global_norm(grads, optim.clip_norm)
                opt.lr = sched.lr
                opt.step(model.params, grads)
                step += 1
                losses.append(val * len(idx))
                norms.append(norm)
                giou_sum += float(iou_terms(pred.value, yt[idx])[0][:, 0].sum())
            rec = {
                "epoch": epoch,
                "lr": sched.lr,
                "train_loss": sum(losses) / len(xt),
                "train_giou_running": giou_sum / len(xt),
                "grad_norm": float(np.mean(norms)),
            }
            if eval_train_each_epoch:
                rec["train_giou"] = evaluate_loss(model, xt, yt, loss_cfg)["giou"]
            if xv is not None:
                vm = evaluate_loss(model, xv, yv, loss_cfg)
                rec.update(val_loss=vm["loss"], val_giou=vm["giou"], val_diou=vm["diou"])
                monitor = vm["loss"]
            else:
                monitor = rec["train_loss"]
            history.append(rec)
            if log:
                log.write(json.dumps(rec, sort_keys=True) + "\n")
                log.flush()
            sched.step(monitor)
            if monitor < best:
                best, best_params, best_epoch, bad = monitor, {k: v.copy() for k, v in model.params.items()}, epoch, 0
            else:
                bad += 1
                if bad >= optim.early_stop_patience:
                    stopped = True
                    break
    finally:
        if log:
            log.close()
    model.params = best_params
    return TrainResult(model, history, stopped, best_epoch)


def config_echo(model_cfg: ModelConfig, optim: OptimConfig, loss_cfg: LossConfig) -> dict:
    return {"model": asdict(model_cfg), "optim": asdict(optim), "loss": asdict(loss_cfg)}
