import csv
import json

import numpy as np
import pytest

from sidtok.checkpoint import read_sid_table
from sidtok.cli import main
from sidtok.config import load_config

SMALL = ["--set", "d_in=8", "--set", "d=4", "--set", "K=4", "--set", "batch_size=8",
         "--set", "t_start=2", "--set", "t_end=10", "--set", "total_steps=12"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-synth", "--out", str(out), "--set", "n_items=80", "--set", "n_clusters=4",
                 "--set", "dim=8", "--seed", "3"]) == 0
    return out


def data_args(dataset):
    return ["--features", str(dataset / "features.bin"), "--pairs", str(dataset / "pairs.tsv")]


def test_gen_synth_outputs(dataset):
    assert {p.name for p in dataset.iterdir()} >= {"features.bin", "pairs.tsv", "labels.tsv",
                                                   "synth_config.json"}
    assert json.loads((dataset / "synth_config.json").read_text())["seed"] == 3


def test_train_writes_artifacts(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *data_args(dataset), "--out", str(out), "--seed", "5", *SMALL]) == 0
    cfg = load_config(out / "config.json")
    assert (cfg.seed, cfg.tokenizer.d, cfg.total_steps) == (5, 4, 12)
    log = [json.loads(line) for line in (out / "loss_log.jsonl").read_text().splitlines()]
    assert len(log) == 12
    ids, sids = read_sid_table(out / "sids.tsv")
    assert len(ids) == 80 and sids.shape == (80, 3)
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((out / "report.json").read_text())


def test_train_is_idempotent(dataset, tmp_path):
    for name in ("a", "b"):
        assert main(["train", *data_args(dataset), "--out", str(tmp_path / name), *SMALL]) == 0
    for f in ("checkpoint.bin", "sids.tsv", "loss_log.jsonl", "config.json", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_and_overrides(dataset, tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"tokenizer": {"d_in": 8, "d": 4, "K": 4},
                                    "total_steps": 3, "batch_size": 8}))
    out = tmp_path / "run"
    assert main(["train", *data_args(dataset), "--config", str(cfg_path), "--out", str(out),
                 "--set", "regulation.f_max=3.0"]) == 0
    cfg = load_config(out / "config.json")
    assert (cfg.total_steps, cfg.regulation.f_max) == (3, 3.0)


def test_encode_matches_training_table(dataset, tmp_path):
    out = tmp_path / "run"
    main(["train", *data_args(dataset), "--out", str(out), *SMALL])
    assert main(["encode", "--checkpoint", str(out / "checkpoint.bin"), "--features",
                 str(dataset / "features.bin"), "--out", str(tmp_path / "again.tsv")]) == 0
    assert (tmp_path / "again.tsv").read_text() == (out / "sids.tsv").read_text()


def test_diagnose(tmp_path, capsys):
    (tmp_path / "a.tsv").write_text("x\t0 0\ny\t1 0\n")
    (tmp_path / "b.tsv").write_text("x\t0 0\ny\t0 0\n")
    assert main(["diagnose", str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv"),
                 "--out", str(tmp_path / "l.csv")]) == 0
    reports = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert reports[0]["sid_entropy"] == pytest.approx(np.log(2))
    assert reports[1]["sid_entropy"] == 0.0
    rows = list(csv.DictReader(open(tmp_path / "l.csv")))
    assert [r["name"] for r in rows] == ["a", "b"]


def test_sweep(dataset, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", *data_args(dataset), "--out", str(out), *SMALL,
                 "--axis", "schedule", "--values", "[[0, 4], [2, 8]]"]) == 0
    assert load_config(out / "point_01" / "config.json").schedule.t_end == 8
    rows = list(csv.DictReader(open(out / "landscape.csv")))
    assert [r["name"] for r in rows] == ["schedule=[0, 4]", "schedule=[2, 8]"]
    assert len(list(csv.DictReader(open(out / "sweep.csv")))) == 2


def test_sweep_usage_errors(dataset, tmp_path, capsys):
    base = ["sweep", *data_args(dataset), "--out", str(tmp_path), *SMALL, "--axis", "f_max"]
    assert main([*base, "--values", "[]"]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "UsageError" in err
    assert main([*base, "--values", "3"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["sweep", *data_args(dataset), "--out", str(tmp_path), "--axis", "nope",
              "--values", "[1]"])
    assert exc.value.code == 2


def test_exit_codes(dataset, tmp_path, capsys):
    args = ["train", *data_args(dataset), "--out", str(tmp_path / "r")]
    assert main([*args, "--set", "bogus=1"]) == 2
    assert main(["train", "--features", str(tmp_path / "none.bin"), "--pairs", "p",
                 "--out", str(tmp_path / "r")]) == 3
    assert main([*args, *SMALL, "--set", "d_in=5"]) == 3
    assert main([*args, *SMALL, "--set", "lr=1e200"]) == 4
    (tmp_path / "bad.ck").write_bytes(b"garbage")
    assert main(["encode", "--checkpoint", str(tmp_path / "bad.ck"), "--features",
                 str(dataset / "features.bin"), "--out", str(tmp_path / "o.tsv")]) == 5
    lines = capsys.readouterr().err.splitlines()
    assert len(lines) == 5 and all(line.startswith("error: ") for line in lines)
    assert "CorruptCheckpointError" in lines[-1] and "NumericError" in lines[-2]
