import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from curbseg.cli import main
from curbseg.lidar_io import read_labels, read_point_cloud

TOY_CONFIG = {
    "grid": {
        "mode": "cylindrical",
        "bounds": [[0.0, 32.0], [-3.141592653589793, 3.141592653589793], [-0.5, 2.0]],
        "resolution": [24, 24, 8],
    },
    "net": {"widths": [2, 2, 2, 2, 2]},
    "train": {"epochs": 2, "lr": 0.02},
}


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared data dir + config + trained checkpoint for the CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    runner = CliRunner()
    r = runner.invoke(main, ["make-data", "--out", str(root / "data"), "--frames", "3",
                             "--seed", "5"])
    assert r.exit_code == 0, r.output
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(TOY_CONFIG))
    r = runner.invoke(main, ["train", "--data", str(root / "data"), "--out", str(root / "run"),
                             "--config", str(cfg_path), "--seed", "1"])
    assert r.exit_code == 0, r.output
    return root


def test_make_data_writes_frames_and_manifest(runner, tmp_path):
    r = runner.invoke(main, ["make-data", "--out", str(tmp_path / "d"), "--frames", "2"])
    assert r.exit_code == 0
    assert sorted(p.name for p in (tmp_path / "d").glob("*.bin")) == ["000000.bin", "000001.bin"]
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["command"] == "make-data"


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.ckpt").exists()
    rows = list(csv.reader((run / "loss_curve.csv").open()))
    assert rows[0] == ["epoch", "total", "ace", "iou"]
    assert len(rows) == 1 + TOY_CONFIG["train"]["epochs"]
    assert (run / "loss_curve.png").exists()
    assert (run / "manifest.json").exists()


def test_train_missing_data_dir_exits_2(runner, tmp_path):
    r = runner.invoke(main, ["train", "--data", str(tmp_path / "nope"),
                             "--out", str(tmp_path / "out")])
    assert r.exit_code == 2


def test_train_same_seed_same_checkpoint(runner, workspace, tmp_path):
    cfg = str(workspace / "cfg.json")
    for out in ("a", "b"):
        r = runner.invoke(main, ["train", "--data", str(workspace / "data"),
                                 "--out", str(tmp_path / out), "--config", cfg, "--seed", "42"])
        assert r.exit_code == 0, r.output
    a = (tmp_path / "a" / "checkpoint.ckpt").read_bytes()
    b = (tmp_path / "b" / "checkpoint.ckpt").read_bytes()
    assert a == b


def test_infer_writes_labels(runner, workspace, tmp_path):
    frame = workspace / "data" / "000000.bin"
    r = runner.invoke(main, ["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                             "--frame", str(frame), "--out", str(tmp_path / "pred"),
                             "--config", str(workspace / "cfg.json")])
    assert r.exit_code == 0, r.output
    cloud = read_point_cloud(frame)
    pred = read_labels(tmp_path / "pred" / "000000.label", len(cloud))
    assert len(pred) == len(cloud)


def test_infer_post_writes_polylines_and_figure(runner, workspace, tmp_path):
    frame = workspace / "data" / "000001.bin"
    r = runner.invoke(main, ["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                             "--frame", str(frame), "--out", str(tmp_path / "pred"),
                             "--config", str(workspace / "cfg.json"), "--post"])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "pred" / "000001_polylines.csv").exists()
    assert (tmp_path / "pred" / "000001_refine.png").exists()


def test_infer_empty_frame(runner, workspace, tmp_path):
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    r = runner.invoke(main, ["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                             "--frame", str(empty), "--out", str(tmp_path / "pred"),
                             "--config", str(workspace / "cfg.json")])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "pred" / "empty.label").read_bytes() == b""


def test_eval_perfect_predictions(runner, workspace, tmp_path):
    # use the ground-truth labels as predictions: all metrics 1.0
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    for label in (workspace / "data").glob("*.label"):
        (pred_dir / label.name).write_bytes(label.read_bytes())
    r = runner.invoke(main, ["eval", "--pred", str(pred_dir), "--truth", str(workspace / "data"),
                             "--out", str(tmp_path / "rep")])
    assert r.exit_code == 0, r.output
    rows = list(csv.reader((tmp_path / "rep" / "metrics.csv").open()))
    header, data = rows[0], rows[1:]
    for row in data:
        rec = dict(zip(header, row))
        assert float(rec["precision"]) == 1.0
        assert float(rec["recall"]) == 1.0
        assert float(rec["f1"]) == 1.0
    assert (tmp_path / "rep" / "metrics.txt").exists()
    assert (tmp_path / "rep" / "metrics.png").exists()


def test_eval_missing_prediction_listed(runner, workspace, tmp_path):
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    labels = sorted((workspace / "data").glob("*.label"))
    (pred_dir / labels[0].name).write_bytes(labels[0].read_bytes())
    r = runner.invoke(main, ["eval", "--pred", str(pred_dir), "--truth", str(workspace / "data"),
                             "--out", str(tmp_path / "rep")])
    assert r.exit_code == 2
    assert "000001" in r.output or "000001" in (r.stderr or "")


def test_eval_metric_floor_exit_code(runner, workspace, tmp_path):
    # disjoint predictions: curb nowhere near truth -> F1 0 -> floor violated
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    for label in (workspace / "data").glob("*.label"):
        n = len(label.read_bytes()) // 4
        np.zeros(n, dtype="<u4").tofile(pred_dir / label.name)
    r = runner.invoke(main, ["eval", "--pred", str(pred_dir), "--truth", str(workspace / "data"),
                             "--out", str(tmp_path / "rep"), "--min-f1", "0.5"])
    assert r.exit_code == 1


def test_post_command(runner, workspace, tmp_path):
    frame = workspace / "data" / "000000.bin"
    truth_label = workspace / "data" / "000000.label"
    r = runner.invoke(main, ["post", "--frame", str(frame), "--pred", str(truth_label),
                             "--out", str(tmp_path / "out")])
    assert r.exit_code == 0, r.output
    assert (tmp_path / "out" / "000000_polylines.csv").exists()
    assert (tmp_path / "out" / "000000.label").exists()


def test_build_labels_command(runner, workspace, tmp_path):
    r = runner.invoke(main, ["build-labels", "--data", str(workspace / "data"),
                             "--out", str(tmp_path / "built")])
    assert r.exit_code == 0, r.output
    built = sorted(p.name for p in (tmp_path / "built").glob("*.label"))
    assert built == ["000000.label", "000001.label", "000002.label"]
    assert (tmp_path / "built" / "000000_review.csv").exists()


def test_bench_requires_ten_frames(runner, workspace, tmp_path):
    r = runner.invoke(main, ["bench", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                             "--data", str(workspace / "data"), "--out", str(tmp_path / "bench")])
    assert r.exit_code == 2


def test_unknown_config_key_exits_2(runner, workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"voxels": {}}))
    r = runner.invoke(main, ["train", "--data", str(workspace / "data"),
                             "--out", str(tmp_path / "out"), "--config", str(bad)])
    assert r.exit_code == 2
