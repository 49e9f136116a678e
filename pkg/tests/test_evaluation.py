import math
import random

import numpy as np
import pytest

from leofusion import evaluation as ev
from leofusion import fusion
from leofusion import simulator as sim
from leofusion.geometry import ParallelogramState


def state(cx=20.0, cy=0.0, l=4.5, w=1.8, theta=0.0):
    return ParallelogramState(cx - l / 2, cy - w / 2, l, w, theta, math.pi / 2, 20.0, 0.5)


def test_stratify_examples():
    assert ev.stratify(state(cy=0.0, l=4.5)) == ("l1", "EL")
    assert ev.stratify(state(cy=3.0, l=18.0)) == ("l2", "LL")
    assert ev.stratify(state(cy=1.5)) == ("l1", "EL")
    assert ev.stratify(state(cy=-1.5000001)) == ("l1", "RL")
    assert ev.stratify(state(cy=6.0, l=2.5)) == ("OTHER", "OTHER")
    assert ev.length_class(3.0) == "l1" and ev.length_class(10.0) == "l1"
    assert ev.length_class(10.0001) == "l2"


def labels(n=60, seed=0):
    rng = np.random.default_rng(seed)
    return [state(rng.uniform(5, 80), rng.uniform(-5, 5), rng.choice([4.5, 16.0, 2.5]), rng.uniform(1.6, 2.6),
                  rng.normal(0, 0.05)) for _ in range(n)]


def test_perfect_predictor():
    ys = labels()
    r = ev.report_from_pairs(ys, ys)
    for key, row in r.rows.items():
        if row.get("absent"):
            continue
        assert row["giou"] == pytest.approx(1.0, abs=1e-12)
        assert all(v == 0 for v in row["mae"].values())
        assert all(v == 0 for v in row["corners"].values())


def test_counts_reconcile_and_absent_rows():
    ys = labels(80)
    preds = [ParallelogramState.from_array(y.as_array() + 0.1) for y in ys]
    r = ev.report_from_pairs(preds, ys)
    assert sum(r.counts.values()) == r.total == 80
    for lc in ev.LENGTH_CLASSES:
        assert sum(r.counts[f"{lc}/{ln}"] for ln in ev.LANES) == r.row(lc).get("n", 0)
    for key, row in r.rows.items():
        if r.counts.get(key, 1) == 0:
            assert row == {"n": 0, "absent": True}
        elif not row.get("absent"):
            assert -1 <= row["giou"] <= 1 and -1 <= row["diou"] <= 1
            assert all(v >= 0 for v in row["mae"].values())
    assert set(r.row()["rel_error"]) == set(ev.REL_PARAMS)


def test_relative_error_denominator():
    ys = [state(cx=20.0), state(cx=30.0)]
    preds = [ParallelogramState.from_array(y.as_array() + np.array([1.0, 0, 0, 0, 0, 0, 0, 0])) for y in ys]
    row = ev.report_from_pairs(preds, ys).row()
    assert row["mae"]["rf_x"] == pytest.approx(1.0)
    assert row["rel_error"]["rf_x"] == pytest.approx(1.0 / np.mean([abs(y.rf_x) for y in ys]))


def test_angle_errors_are_wrapped():
    y = state(theta=math.pi - 0.05)
    p = ParallelogramState.from_array(np.r_[y.as_array()[:4], -math.pi + 0.05, y.as_array()[5:]])
    assert ev.sample_errors(p, y)["theta"] == pytest.approx(0.1)


def test_report_is_order_independent():
    ys = labels(50, seed=3)
    rng = np.random.default_rng(4)
    preds = [ParallelogramState.from_array(y.as_array() + rng.normal(0, 0.2, 8)) for y in ys]
    ref = ev.report_from_pairs(preds, ys).to_json()
    idx = list(range(50))
    random.Random(1).shuffle(idx)
    assert ev.report_from_pairs([preds[i] for i in idx], [ys[i] for i in idx]).to_json() == ref


@pytest.fixture(scope="module")
def noiseless_frames():
    frames = []
    for lane in ("EL", "LL", "RL"):
        c = sim.ScenarioConfig("HIGHWAY_FOLLOW", 1.0, 2, 4.5, 1.8, noise_scale=0.0, motion_scale=0.0, lane=lane)
        frames += sim.generate_scenario(c)
    return [sim.with_fused_label(f, fusion.fuse_tracks(f.tracks)) if f.tracks else f for f in frames]


def test_baseline_noiseless_is_near_perfect(noiseless_frames):
    r = ev.compare_baseline(noiseless_frames)
    assert r.row()["giou"] >= 0.99


def test_baseline_occlusion_worse_length(noiseless_frames):
    occ = sim.generate_scenario(sim.ScenarioConfig("OCCLUSION", 4.0, 2, 4.5, 1.8, lane="EL"))
    labelled = []
    for f in occ:
        if f.tracks:
            labelled.append(sim.with_fused_label(f, fusion.fuse_tracks(f.tracks)))
    clean = ev.compare_baseline(noiseless_frames)
    dirty = ev.compare_baseline(labelled)
    assert dirty.row()["mae"]["l"] > clean.row()["mae"]["l"]
    assert set(dirty.to_dict()) == set(clean.to_dict())
    assert set(dirty.row()) == set(clean.row())


def test_csv_and_plots(tmp_path):
    ys = labels(30)
    r = ev.report_from_pairs(ys, ys)
    lines = r.to_csv().splitlines()
    assert lines[0].startswith("stratum,n,giou")
    assert len(lines) == 1 + len(r.rows)
    a = r.write_plots(tmp_path / "a")
    b = r.write_plots(tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert all(p.read_text().lstrip().startswith("<?xml") for p in a)
