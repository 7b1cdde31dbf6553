"""CLI dispatch, exit codes and a miniature end-to-end run."""

import csv

import numpy as np
import pytest

from perfuseg.cli import dispatch
from perfuseg.volume import read_ctpv, read_pgm


def test_unknown_subcommand_exits_1(capsys):
    assert dispatch(["frobnicate"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_required_flag_exits_1(capsys):
    assert dispatch(["predict", "--model", "mjnet"]) == 1


def test_model_audit_prints_declared_total(capsys):
    assert dispatch(["model", "--name", "mjnet"]) == 0
    out = capsys.readouterr().out
    assert "981,553" in out
    assert "difference" in out


def test_model_unknown_name_exits_1(capsys):
    assert dispatch(["model", "--name", "vgg"]) == 1


def test_missing_input_file_exits_2(tmp_path, capsys):
    code = dispatch([
        "preprocess", "--in", str(tmp_path / "none.ctpv"), "--out", str(tmp_path / "o.ctpv"),
    ])
    assert code == 2


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    cfg = root / "phantom.cfg"
    cfg.write_text(
        "n_patients = 2\nn_slices = 1\nsize = 64\nn_frames = 8\nnoise_sigma = 0\n"
    )
    out = root / "raw"
    assert dispatch(["phantom", "--spec", str(cfg), "--out", str(out)]) == 0
    return out


def test_phantom_outputs(phantom_dir):
    vol = read_ctpv(phantom_dir / "p00.ctpv")
    assert vol.voxels.shape == (8, 1, 64, 64)
    labels = read_pgm(phantom_dir / "p00_s00_labels.pgm")
    assert labels.shape == (64, 64)
    assert (phantom_dir / "p00_transforms.csv").exists()


def test_phantom_bad_spec_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("made_up_key = 1\n")
    assert dispatch(["phantom", "--spec", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_preprocess_and_baseline(phantom_dir, tmp_path):
    pre = tmp_path / "p00_pre.ctpv"
    code = dispatch([
        "preprocess", "--in", str(phantom_dir / "p00.ctpv"), "--out", str(pre),
        "--skip-registration",
    ])
    assert code == 0
    vol = read_ctpv(pre)
    assert float(vol.voxels.min()) >= 0.0 and float(vol.voxels.max()) <= 1.0

    out = tmp_path / "base"
    code = dispatch([
        "baseline", "--in", str(phantom_dir / "p00.ctpv"), "--rule", "cereda_core",
        "--out", str(out),
    ])
    assert code == 0
    assert (out / "p00_s00_cereda_core.pgm").exists()
    assert (out / "p00_rcbf.f32").exists()


def test_baseline_unknown_rule_exits_1(phantom_dir, tmp_path):
    code = dispatch([
        "baseline", "--in", str(phantom_dir / "p00.ctpv"), "--rule", "nope",
        "--out", str(tmp_path / "x"),
    ])
    assert code == 1


def test_train_predict_evaluate_smoke(phantom_dir, tmp_path):
    # tiny end-to-end: 2 patients, 1 fold, 2 epochs
    pre_dir = tmp_path / "pre"
    pre_dir.mkdir()
    for pid in ("p00", "p01"):
        assert dispatch([
            "preprocess", "--in", str(phantom_dir / f"{pid}.ctpv"),
            "--out", str(pre_dir / f"{pid}.ctpv"), "--skip-registration",
        ]) == 0
        (pre_dir / f"{pid}_s00_labels.pgm").write_bytes(
            (phantom_dir / f"{pid}_s00_labels.pgm").read_bytes()
        )

    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 2\npatience = 1\nbatch_size = 8\naugment = false\n")
    run = tmp_path / "run"
    assert dispatch([
        "train", "--model", "mjnet", "--data", str(pre_dir), "--fold", "p01",
        "--config", str(cfg), "--out", str(run),
    ]) == 0
    ckpt = run / "mjnet_p01.psck"
    assert ckpt.exists()
    log = list(csv.reader((run / "mjnet_p01_log.csv").open()))
    assert log[0] == ["epoch", "train_cost", "val_cost", "seconds"]
    assert len(log) == 3

    pred_dir = tmp_path / "pred"
    assert dispatch([
        "predict", "--model", "mjnet", "--ckpt", str(ckpt),
        "--in", str(pre_dir / "p01.ctpv"), "--out", str(pred_dir),
    ]) == 0
    assert (pred_dir / "p01_s00_pred.pgm").exists()
    assert (pred_dir / "p01_s00_cont.pgm").exists()

    report = tmp_path / "report.csv"
    assert dispatch([
        "evaluate", "--pred", str(pred_dir), "--truth", str(pre_dir),
        "--out", str(report),
    ]) == 0
    rows = list(csv.reader(report.open()))
    assert rows[0][:3] == ["fold", "class", "dice"]
    assert len(rows) == 4  # header + 3 classes


def test_train_bad_config_key_exits_1(phantom_dir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp_speed = 9\n")
    code = dispatch([
        "train", "--model", "mjnet", "--data", str(phantom_dir), "--fold", "p01",
        "--config", str(cfg), "--out", str(tmp_path / "r"),
    ])
    assert code == 1


def test_predict_wrong_model_for_checkpoint(phantom_dir, tmp_path):
    from perfuseg.checkpoint import save_checkpoint

    ckpt = tmp_path / "a.psck"
    save_checkpoint(ckpt, "arch1", {}, {})
    code = dispatch([
        "predict", "--model", "mjnet", "--ckpt", str(ckpt),
        "--in", str(phantom_dir / "p00.ctpv"), "--out", str(tmp_path / "p"),
    ])
    assert code == 2  # checkpoint errors are I/O-class errors


def test_gradcheck_command_exits_0(capsys):
    assert dispatch(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "all operators pass" in out
