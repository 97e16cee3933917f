"""Command line interface: subcommands, config precedence, exit codes."""

import json
import os

import numpy as np
import pytest

from namnc.cli import main, parse_config_file, resolve_settings, build_parser
from namnc.data import load_csv


def run_cli(args):
    return main(list(args))


# -- synth -----------------------------------------------------------------------

def test_synth_writes_csv(tmp_path, capsys):
    out = tmp_path / "s"
    code = run_cli(["synth", "--length", "80", "--seed", "3", "--out", str(out)])
    assert code == 0
    ds = load_csv(out / "synthetic.csv")
    assert ds.n_steps == 80 and ds.n_series == 8
    printed = capsys.readouterr().out
    assert "root seed: 3" in printed


def test_synth_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(["synth", "--length", "100", "--seed", "9", "--out", str(a)])
    run_cli(["synth", "--length", "100", "--seed", "9", "--out", str(b)])
    assert (a / "synthetic.csv").read_bytes() == (b / "synthetic.csv").read_bytes()


def test_synth_csv_keeps_half_relation(tmp_path):
    out = tmp_path / "s"
    run_cli(["synth", "--length", "90", "--seed", "0", "--out", str(out)])
    ds = load_csv(out / "synthetic.csv")
    ts1 = ds.values[:, ds.series_index("ts1")]
    half = ds.values[:, ds.series_index("half_ts1")]
    np.testing.assert_array_equal(half, 0.5 * ts1)


# -- params ----------------------------------------------------------------------

def test_params_prints_reference_count(capsys):
    code = run_cli(["params", "--tau", "8", "--k-series", "7", "--sharing", "none"])
    assert code == 0
    assert "192,591" in capsys.readouterr().out


def test_params_sharing_changes_count(capsys):
    run_cli(["params", "--tau", "8", "--k-series", "7", "--sharing", "time"])
    out1 = capsys.readouterr().out
    assert "24,423" in out1
    run_cli(["params", "--tau", "8", "--k-series", "7", "--sharing", "feature"])
    assert "27,855" in capsys.readouterr().out


def test_params_needs_series_count(capsys):
    code = run_cli(["params", "--tau", "8"])
    assert code == 2


# -- exit codes --------------------------------------------------------------------

def test_missing_csv_is_io_error(tmp_path, capsys):
    code = run_cli(["train", "--data", str(tmp_path / "absent.csv"),
                    "--out", str(tmp_path / "o")])
    assert code == 4
    assert "error (io)" in capsys.readouterr().err


def test_unknown_sharing_rejected_by_parser(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["train", "--data", "synthetic", "--sharing", "bogus"])
    assert exc.value.code == 2


def test_bad_config_key_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("no_such_setting=1\n")
    code = run_cli(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error (config)" in capsys.readouterr().err


def test_malformed_config_line_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("just a line without equals\n")
    code = run_cli(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2


def test_corrupt_checkpoint_is_runtime_error(tmp_path, capsys):
    ckpt = tmp_path / "ckpt.json"
    ckpt.write_text('{"magic": "other", "version": 1}')
    synth = tmp_path / "d"
    run_cli(["synth", "--length", "80", "--out", str(synth)])
    code = run_cli(["explain", "--checkpoint", str(ckpt),
                    "--data", str(synth / "synthetic.csv"),
                    "--out", str(tmp_path / "o")])
    assert code == 3
    assert "error (runtime)" in capsys.readouterr().err


# -- config precedence ---------------------------------------------------------------

def test_config_file_supplies_settings(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=5\nlength=70\n")
    out = tmp_path / "o"
    code = run_cli(["synth", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    assert "root seed: 5" in capsys.readouterr().out
    assert load_csv(out / "synthetic.csv").n_steps == 70


def test_cli_flag_beats_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=5\n")
    code = run_cli(["synth", "--config", str(cfg), "--seed", "7",
                    "--length", "70", "--out", str(tmp_path / "o")])
    assert code == 0
    assert "root seed: 7" in capsys.readouterr().out


def test_defaults_fill_remaining_settings(tmp_path):
    ns = build_parser().parse_args(["synth", "--out", str(tmp_path)])
    cfg = resolve_settings(ns)
    assert cfg["seed"] == 0
    assert cfg["tau"] == 8
    assert cfg["folds"] == 10
    assert cfg["format"] == "csv"


def test_snapshot_reproduces_run(tmp_path):
    # the persisted snapshot is itself a valid config file
    a = tmp_path / "a"
    run_cli(["synth", "--length", "75", "--seed", "13", "--out", str(a)])
    snap = a / "config.txt"
    assert snap.exists()
    b = tmp_path / "b"
    code = run_cli(["synth", "--config", str(snap), "--out", str(b)])
    assert code == 0
    assert (a / "synthetic.csv").read_bytes() == (b / "synthetic.csv").read_bytes()


def test_config_comments_and_blanks_ignored(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# a comment\n\nseed=4\n")
    assert parse_config_file(cfg) == {"seed": "4"}


def test_out_root_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NAMNC_OUT", str(tmp_path / "root"))
    code = run_cli(["synth", "--length", "70"])
    assert code == 0
    assert (tmp_path / "root" / "synth" / "synthetic.csv").exists()


# -- train / cv / explain flows --------------------------------------------------------

TRAIN_ARGS = ["--data", "synthetic", "--length", "160", "--tau", "4",
              "--max-epochs", "1", "--seed", "1"]


def test_train_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "t"
    code = run_cli(["train", *TRAIN_ARGS, "--out", str(out)])
    assert code == 0
    assert (out / "checkpoint.json").exists()
    assert (out / "config.txt").exists()
    record = json.loads((out / "run_record.json").read_text())
    assert record["n_epochs"] == 1
    assert record["config"]["tau"] == 4
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "fold,units,series,r2,rmse,mae"
    assert len(metrics) > 1
    printed = capsys.readouterr().out
    assert "params=" in printed


def test_train_then_explain_round_trip(tmp_path, capsys):
    train_out = tmp_path / "t"
    run_cli(["train", *TRAIN_ARGS, "--out", str(train_out)])
    data = tmp_path / "d"
    run_cli(["synth", "--length", "160", "--seed", "1", "--out", str(data)])
    exp_out = tmp_path / "e"
    code = run_cli(["explain", "--checkpoint", str(train_out / "checkpoint.json"),
                    "--data", str(data / "synthetic.csv"),
                    "--series", "ts1", "--target", "ts1",
                    "--out", str(exp_out)])
    assert code == 0
    manifest = json.loads((exp_out / "manifest.json").read_text())
    # one importance grid + one sweep per time offset
    assert manifest["count"] == 1 + 4
    assert manifest["checkpoint_sha256"]
    for fname in manifest["files"]:
        assert (exp_out / fname).exists()


def test_explain_requires_checkpoint(tmp_path, capsys):
    code = run_cli(["explain", "--data", "synthetic",
                    "--out", str(tmp_path / "e")])
    assert code == 2


def test_explain_rejects_mismatched_dataset(tmp_path, capsys):
    train_out = tmp_path / "t"
    run_cli(["train", *TRAIN_ARGS, "--out", str(train_out)])
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
    code = run_cli(["explain", "--checkpoint", str(train_out / "checkpoint.json"),
                    "--data", str(bad), "--out", str(tmp_path / "e")])
    assert code == 3


def test_cv_writes_per_fold_records(tmp_path, capsys):
    out = tmp_path / "cv"
    code = run_cli(["cv", "--data", "synthetic", "--length", "160", "--tau", "4",
                    "--max-epochs", "1", "--folds", "4", "--seed", "2",
                    "--out", str(out)])
    assert code == 0
    for fold in (1, 2, 3):
        assert (out / f"run_record_fold{fold}.json").exists()
    agg = json.loads((out / "aggregate.json").read_text())
    assert len(agg["names"]) == 8
    folds_rows = (out / "folds.csv").read_text().splitlines()
    assert folds_rows[0] == "fold,units,series,r2,rmse,mae"
    assert any(row.startswith("mean,") for row in folds_rows[1:])


def test_train_repetitions_branch(tmp_path, capsys):
    out = tmp_path / "reps"
    code = run_cli(["train", *TRAIN_ARGS, "--repetitions", "2", "--out", str(out)])
    assert code == 0
    assert (out / "run_record_rep000.json").exists()
    assert (out / "run_record_rep001.json").exists()
    manifest = json.loads((out / "importance" / "manifest.json").read_text())
    # 8 targets per repetition
    assert manifest["count"] == 16
