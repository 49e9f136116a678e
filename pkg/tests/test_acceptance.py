"""Acceptance gate. Each test prints one PASS/FAIL line for its criterion."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import mc_overlap_oracle, random_polygon
from leofusion import evaluation as ev
from leofusion import fusion as fu
from leofusion import geometry as geo
from leofusion import graph as gb
from leofusion import simulator as sim
from leofusion import training as tr
from leofusion.autodiff import Tape, Tensor
from leofusion.gat import Model, ModelConfig
from test_autodiff import PRIMITIVES, grad_check


@pytest.fixture
def verdict(capsys):
    def report(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail

    return report


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# 1 -------------------------------------------------------------------------


def test_1_geometry_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        a, b = random_polygon(rng, 1.5), random_polygon(rng, 1.5)
        mc = mc_overlap_oracle(a, b, n=1_000_000, seed=k)[:3]
        an = geo.overlap_metrics(a, b)
        worst = max(worst, max(abs(x - y) for x, y in zip(an, mc)))
    dt = time.perf_counter() - t0
    verdict(1, "geometry vs Monte-Carlo", worst <= 2e-2 and dt < 60,
            f"max |analytic - MC| over IoU/GIoU/DIoU = {worst:.4f} (tol 2e-2), {dt:.1f} s (< 60 s)")


# 2 -------------------------------------------------------------------------


def _loss_gradient_errors():
    rng = np.random.default_rng(5)
    worst = 0.0
    checked = 0
    while checked < 20:
        label = geo.ParallelogramState(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5),
                                       rng.uniform(1, 2.5), rng.uniform(-3, 3), rng.uniform(1.0, 2.1),
                                       rng.normal(0, 5), rng.normal()).as_array()
        pred = label + rng.normal(scale=0.25, size=8)
        if tr.iou_terms(pred, label)[0][0, 1] < -0.5:
            continue
        with Tape() as tape:
            p = Tensor(pred, requires_grad=True)
            loss = tr.total_loss(p, label)
        an = tape.backward(loss)[p]
        fd = np.zeros(8)
        for i in range(8):
            e = np.zeros(8)
            e[i] = 1e-5
            fd[i] = (tr.total_loss(pred + e, label).value - tr.total_loss(pred - e, label).value) / 2e-5
        worst = max(worst, rel_err(an, fd))
        checked += 1
    return worst


def _model_loss_gradient_error():
    cfg = ModelConfig(d_model=8, heads=2, layers=2, dropout=0.0, seed=1)
    m = Model.init(cfg)
    rng = np.random.default_rng(6)
    m.params = {k: v + 0.2 * rng.normal(size=v.shape) for k, v in m.params.items()}
    x = rng.normal(size=(2, 48, 11))
    y = np.array([[0.1, -0.2, 1.2, 0.9, 0.05, 1.5, 0.3, -0.1], [-0.2, 0.1, 1.0, 1.1, -0.1, 1.6, -0.2, 0.2]])

    def f(params):
        mm = Model(cfg, params, m.feature_stats, m.label_stats)
        return float(tr.total_loss(mm.decode(mm.forward(x)), y).value)

    with Tape() as tape:
        P = {k: Tensor(v, requires_grad=True) for k, v in m.params.items()}
        loss = tr.total_loss(m.decode(m.forward(x, tensors=P)), y)
    grads = tape.backward(loss)
    an, fd = [], []
    for name in ("in.W", "l0.W_intra", "l0.a_inter", "l1.lam", "l1.W_msg", "out.W", "out.b"):
        for _ in range(4):
            idx = tuple(rng.integers(0, s) for s in m.params[name].shape)
            hi, lo = dict(m.params), dict(m.params)
            hi[name], lo[name] = hi[name].copy(), lo[name].copy()
            hi[name][idx] += 1e-5
            lo[name][idx] -= 1e-5
            an.append(grads[P[name]][idx])
            fd.append((f(hi) - f(lo)) / 2e-5)
    return rel_err(np.array(an), np.array(fd))


def test_2_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    failed = []
    for name, (build, arrays) in sorted(PRIMITIVES.items()):
        try:
            grad_check(build, *arrays)
        except AssertionError:
            failed.append(name)
    loss_err = _loss_gradient_errors()
    model_err = _model_loss_gradient_error()
    dt = time.perf_counter() - t0
    ok = not failed and loss_err <= 1e-3 and model_err <= 1e-3 and dt < 120
    verdict(2, "gradient fidelity", ok,
            f"{len(PRIMITIVES) - len(failed)}/{len(PRIMITIVES)} primitives within 1e-4; "
            f"L_total wrt prediction rel err {loss_err:.2e}, wrt network parameters {model_err:.2e} "
            f"(tol 1e-3); {dt:.1f} s")


# 3 -------------------------------------------------------------------------


def test_3_attention_invariants(verdict):
    m = Model.init(ModelConfig(dropout=0.0, seed=4))
    rng = np.random.default_rng(7)
    m.params = {k: v + 0.05 * rng.normal(size=v.shape) for k, v in m.params.items()}
    row_err = 0.0
    for _ in range(3):
        x = rng.normal(size=(48, 11))
        for layer in range(4):
            for br in ("intra", "inter"):
                for head in range(4):
                    a = m.attention(x, layer, br, head)
                    row_err = max(row_err, float(np.max(np.abs(a.sum(axis=1) - 1))))
    x = rng.normal(size=(1, 48, 11))
    # lambda = 1: perturbing one source leaves every other source's nodes untouched
    y = x.copy()
    src0 = [gb.node_index(0, k) for k in range(6)]
    y[0, src0] += 1.0
    h1 = m.forward(x, lam_override=1.0, return_nodes=True)[1].value
    h2 = m.forward(y, lam_override=1.0, return_nodes=True)[1].value
    rest = [i for i in range(48) if i not in src0]
    lam1 = bool(np.array_equal(h1[0, rest], h2[0, rest]))
    # lambda = 0: perturbing one slot leaves every other slot untouched
    y = x.copy()
    slot0 = [gb.node_index(s, 0) for s in range(8)]
    y[0, slot0] += 1.0
    h1 = m.forward(x, lam_override=0.0, return_nodes=True)[1].value
    h2 = m.forward(y, lam_override=0.0, return_nodes=True)[1].value
    rest = [i for i in range(48) if i not in slot0]
    lam0 = bool(np.array_equal(h1[0, rest], h2[0, rest]))
    perm = rng.permutation(48)
    masks = (gb.INTRA_MASK[np.ix_(perm, perm)], gb.INTER_MASK[np.ix_(perm, perm)])
    out, h = m.forward(x, return_nodes=True)
    out_p, h_p = m.forward(x[:, perm], masks=masks, return_nodes=True)
    eq = max(float(np.max(np.abs(h_p.value[0] - h.value[0, perm]))), float(np.max(np.abs(out_p.value - out.value))))
    ok = row_err <= 1e-12 and lam1 and lam0 and eq <= 1e-9
    verdict(3, "attention invariants", ok,
            f"max |row sum - 1| = {row_err:.1e}; lambda=1 source isolation {lam1}; lambda=0 slot isolation "
            f"{lam0}; permutation equivariance error {eq:.1e}")


# 4 -------------------------------------------------------------------------


def test_4_graph_counts(verdict):
    frames = sim.generate_scenario(sim.ScenarioConfig("HIGHWAY_FOLLOW", 1.0, 7, 4.5, 1.8, lane="LL"))
    w = frames[15:21]
    lrl = fu.SensorId.LRL
    w[-1] = replace(w[-1], tracks=[t for t in w[-1].tracks if t.sensor_id is not lrl])
    g = gb.build_graph(w, w[-1].truth)
    counts = (len(g.edges_temporal), len(g.edges_spatial), len(g.edges_self))
    s0, s1 = g.features[gb.node_index(lrl.index, 0)], g.features[gb.node_index(lrl.index, 1)]
    held = bool(np.array_equal(s0[:10], s1[:10]) and s0[10] == 0.02 + s1[10])
    verdict(4, "graph construction", counts == (40, 336, 48) and held,
            f"edges (temporal, spatial, self) = {counts}; hold-last copies features and adds 0.02 s: {held}")


# 5 -------------------------------------------------------------------------


def overfit_graphs():
    cfgs = sim.make_configs(list(sim.ScenarioKind), 2, 0.8, seed=1)
    frames = [f for c in cfgs for f in sim.generate_scenario(c)]
    return tr.graphs_from_frames(frames)[:256]


def test_5_overfit(verdict):
    graphs = overfit_graphs()
    assert len(graphs) == 256
    t0 = time.perf_counter()
    res = tr.train(graphs, None, ModelConfig(), tr.OptimConfig())
    dt = time.perf_counter() - t0
    x, y = tr.stack(res.model, graphs)
    giou = tr.evaluate_loss(res.model, x, y, tr.LossConfig())["giou"]
    losses = [h["train_loss"] for h in res.history]
    decreasing = all(b < a for a, b in zip(losses[:5], losses[1:5]))
    ok = giou >= 0.9 and decreasing and len(losses) <= 50 and dt < 600
    verdict(5, "overfit 256 samples", ok,
            f"final train GIoU {giou:.4f} (need >= 0.9) after {len(losses)} epochs in {dt:.0f} s; "
            f"loss {losses[0]:.3f} -> {losses[-1]:.3f}; first 5 epochs strictly decreasing: {decreasing}")


# 6 -------------------------------------------------------------------------


def test_6_fusion_oracle(verdict):
    worst = 0.0
    for kind in ("HIGHWAY_FOLLOW", "CUT_IN", "ARTICULATED"):
        length, width = (18.0, 2.5) if kind == "ARTICULATED" else (4.5, 1.8)
        for lane in ("EL", "LL", "RL"):
            c = sim.ScenarioConfig(kind, 1.0, 3, length, width, noise_scale=0.0, motion_scale=0.0, lane=lane)
            for f in sim.generate_scenario(c):
                if f.tracks:
                    s = fu.fuse_tracks(f.tracks).state
                    worst = max(worst, abs(s.rf_x - f.truth.rf_x), abs(s.rf_y - f.truth.rf_y))
    hits = total = 0
    for lane in ("EL", "LL", "RL"):
        for seed in range(4):
            c = sim.ScenarioConfig("HIGHWAY_FOLLOW", 4.0, seed, 4.5, 1.8, lane=lane)
            for f in sim.generate_scenario(c):
                if not f.tracks:
                    continue
                s = fu.fuse_tracks(f.tracks).state
                anchor = fu.anchor_track(f.tracks)
                rf = np.array([f.truth.rf_x, f.truth.rf_y])
                sigma = math.sqrt(np.trace(sim.noise_cov(sim.SENSORS[anchor.sensor_id], rf)))
                hits += math.hypot(s.rf_x - rf[0], s.rf_y - rf[1]) <= 2 * sigma
                total += 1
    rate = hits / total
    verdict(6, "geometric fusion oracle", worst <= 1e-6 and rate >= 0.95,
            f"noiseless max RF error {worst:.2e} m (tol 1e-6); noisy RF within 2 sigma in "
            f"{rate:.3f} of {total} frames (need >= 0.95)")


# 7 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ablation_setup():
    train_cfgs = sim.make_configs(list(sim.ScenarioKind), 3, 4.0, seed=11)
    train_cfgs += sim.make_configs(["OCCLUSION"], 3, 4.0, seed=12, lane="EL")
    frames = [f for c in train_cfgs for f in sim.generate_scenario(c)]
    graphs = tr.graphs_from_frames(frames, stride=3)
    res = tr.train(graphs, None, ModelConfig(), tr.OptimConfig(max_epochs=12))
    test_cfgs = sim.make_configs(["OCCLUSION"], 4, 3.0, seed=77, lane="EL")
    test_frames = [f for c in test_cfgs for f in sim.generate_scenario(c)]
    return res.model, tr.graphs_from_frames(test_frames, stride=2)


def test_7_ablation_direction(verdict, ablation_setup):
    model, graphs = ablation_setup
    full = ev.evaluate(model, graphs)
    no_inter = ev.evaluate(model, graphs, no_inter_attention=True)
    no_lrr = ev.evaluate(model, graphs, drop_sensors=["LRR"])
    f, n = full.row()["mae"], no_inter.row()["mae"]
    fp_full = full.row("ALL", "EL")["corners"]["fp_x"]
    fp_drop = no_lrr.row("ALL", "EL")["corners"]["fp_x"]
    ok = n["rf_x"] > f["rf_x"] and n["l"] > f["l"] and fp_drop > fp_full
    verdict(7, "ablation direction", ok,
            f"{full.total} held-out occlusion samples (GIoU {full.row()['giou']:.3f}); no inter-attention: "
            f"RF_x MAE {f['rf_x']:.3f} -> {n['rf_x']:.3f} m, l MAE {f['l']:.3f} -> {n['l']:.3f} m; "
            f"drop LRR: EL FP_x MAE {fp_full:.3f} -> {fp_drop:.3f} m")


# 8 -------------------------------------------------------------------------


def test_8_latency(verdict):
    m = Model.init(ModelConfig())
    c = sim.make_configs(["HIGHWAY_FOLLOW"], 1, 1.0, seed=2)[0]
    graphs = tr.graphs_from_frames(sim.generate_scenario(c))
    lat = ev.measure_latency(m, graphs, iterations=50)
    verdict(8, "single-graph latency", lat["single_mean_ms"] < 50,
            f"mean {lat['single_mean_ms']:.2f} ms, p95 {lat['single_p95_ms']:.2f} ms (< 50 ms); "
            f"batch-128 throughput {lat['batch_graphs_per_s']:.0f} graphs/s (reported only)")


# 9 -------------------------------------------------------------------------


def test_9_determinism_and_round_trips(verdict, tmp_path):
    checks = {}
    cfg = sim.ScenarioConfig("CUT_IN", 2.0, 5, 4.6, 1.8, sensor_dropout_prob=0.1)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    frames = sim.generate_scenario(cfg)
    sim.write_dataset(frames, a)
    sim.write_dataset(sim.generate_scenario(cfg), b)
    checks["dataset bytes"] = a.read_bytes() == b.read_bytes()
    back = sim.read_dataset(a)
    sim.write_dataset(back, b)
    checks["dataset read/write"] = (a.read_bytes() == b.read_bytes()
                                    and [f.to_dict() for f in back] == [f.to_dict() for f in frames])

    graphs = tr.graphs_from_frames(frames, stride=4)
    small = ModelConfig(d_model=16, heads=2, layers=2)
    optim = tr.OptimConfig(max_epochs=2, batch=16)
    m1 = tr.train(graphs, None, small, optim).model
    m2 = tr.train(graphs, None, small, optim).model
    h1, h2 = m1.save(tmp_path / "m1.ckpt"), m2.save(tmp_path / "m2.ckpt")
    checks["checkpoint bytes"] = h1 == h2
    h3 = Model.load(tmp_path / "m1.ckpt").save(tmp_path / "m3.ckpt")
    checks["checkpoint read/write"] = h3 == h1

    r1 = ev.evaluate(m1, graphs).to_json()
    r2 = ev.evaluate(Model.load(tmp_path / "m2.ckpt"), list(reversed(graphs))).to_json()
    checks["report bytes"] = r1 == r2
    verdict(9, "determinism and round-trips", all(checks.values()),
            ", ".join(f"{k}: {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))
