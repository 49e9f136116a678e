import json

import pytest

from leofusion import __version__
from leofusion.cli import main
from leofusion.config import RunConfig
from leofusion.errors import InvalidConfig


def write_config(path, **sections):
    path.write_text(json.dumps(sections))
    return path


def test_version(capsys):
    assert main(["version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "schema" in out


def test_missing_config_is_usage_error(capsys, tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "d.jsonl")]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "d.jsonl")]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_keys(tmp_path):
    assert main(["frobnicate"]) == 2
    bad = write_config(tmp_path / "c.json", simulator={"durration": 3})
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "d.jsonl")]) == 2


def test_config_rejects_unknown_and_echoes_defaults():
    with pytest.raises(InvalidConfig):
        RunConfig.from_dict({"training": {"optim": {"lr": 1}}})
    d = RunConfig.from_dict({"seed": 4}).to_dict()
    assert d["training"]["optim"]["lr0"] == 1e-3 and d["model"]["layers"] == 4 and d["seed"] == 4
    assert RunConfig.from_dict(d) == RunConfig.from_dict({"seed": 4})


def test_bad_dataset_is_data_error(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"schema": "leo-dataset", "version": 9}\n')
    assert main(["label", "--data", str(p), "--out", str(tmp_path / "l.jsonl")]) == 3


def test_pipeline_smoke_and_reproducibility(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "run.json", seed=1,
        simulator={"kinds": ["HIGHWAY_FOLLOW", "OCCLUSION"], "scenarios_per_kind": 1, "duration": 1.0},
        model={"d_model": 16, "heads": 2, "layers": 2},
        training={"optim": {"max_epochs": 2, "batch": 32}, "val_fraction": 0.5, "window_stride": 2},
        evaluation={"latency_iterations": 5},
    )
    runs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        assert main(["simulate", "--config", str(cfg), "--out", str(d / "sim.jsonl")]) == 0
        assert main(["label", "--data", str(d / "sim.jsonl"), "--out", str(d / "lab.jsonl")]) == 0
        assert main(["train", "--data", str(d / "lab.jsonl"), "--config", str(cfg), "--out", str(d / "m.ckpt")]) == 0
        assert main(["eval", "--ckpt", str(d / "m.ckpt"), "--data", str(d / "lab.jsonl"), "--config", str(cfg),
                     "--drop-sensor", "LRR", "--out", str(d / "rep.json")]) == 0
        assert main(["eval", "--baseline", "--data", str(d / "lab.jsonl"), "--out", str(d / "base.json")]) == 0
        assert main(["bench", "--ckpt", str(d / "m.ckpt"), "--config", str(cfg), "--out", str(d / "bench.json")]) == 0
        runs.append(d)
    a, b = runs
    for name in ("sim.jsonl", "lab.jsonl", "m.ckpt", "rep.json", "rep.csv", "base.json",
                 "m.ckpt.metrics.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    man = json.loads((a / "m.ckpt.manifest.json").read_text())
    assert man["command"] == "train" and man["config"]["training"]["optim"]["max_epochs"] == 2
    assert set(man["inputs"]) == {"data", "config"} and len(man["outputs"]) == 2
    rep = json.loads((a / "rep.json").read_text())
    assert rep["config"]["drop_sensors"] == ["LRR"]
    assert (a / "rep_plots" / "rf_err_vs_range.svg").exists()
    assert "single_mean_ms" in json.loads((a / "bench.json").read_text())
    assert main(["eval", "--ckpt", str(a / "m.ckpt"), "--data", str(a / "lab.jsonl"),
                 "--drop-sensor", "RADAR9", "--out", str(a / "x.json")]) == 2
