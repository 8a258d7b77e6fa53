import json
import os

import numpy as np
import pytest

from protomatch.cli import run
from protomatch.io import read_embeddings, read_labels, write_embeddings, write_labels
from protomatch.synth import class_counts_profile

SMALL = {"seed": 3, "data": {"classes": 12, "n_max": 60, "imbalance": 10, "n_test": 6},
         "train": {"epochs": 2}, "head": {"epochs": 3}, "metrics": {"k_uniformity": 3}}


def _files(d):
    return {n: (d / n).read_bytes() for n in sorted(os.listdir(d))}


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps(SMALL))
    c = str(cfg)
    assert run(["generate", "--config", c, "--out", str(root / "data")]) == 0
    assert run(["match", "--config", c, "--data", str(root / "data"), "--out", str(root / "model")]) == 0
    assert run(["recognize", "--config", c, "--data", str(root / "data"), "--model", str(root / "model"),
                "--out", str(root / "rec")]) == 0
    return root


def test_generate_manifest_counts(pipeline_dirs):
    m = json.loads((pipeline_dirs / "data" / "manifest.json").read_text())
    assert m["class_counts"] == class_counts_profile(12, 60, 10).tolist()
    run_m = json.loads((pipeline_dirs / "data" / "run_manifest.json").read_text())
    assert run_m["config"]["data"]["spread"] == 1.5 and run_m["config"]["seed"] == 3
    assert run_m["config"]["loss"] == {"lam": 0.5, "tau": 0.07}


def test_every_command_is_byte_reproducible(pipeline_dirs, tmp_path):
    c = str(pipeline_dirs / "c.json")
    data = str(pipeline_dirs / "data")
    assert run(["generate", "--config", c, "--out", str(tmp_path / "data")]) == 0
    assert _files(tmp_path / "data") == _files(pipeline_dirs / "data")
    assert run(["match", "--config", c, "--data", data, "--out", str(tmp_path / "model")]) == 0
    assert _files(tmp_path / "model") == _files(pipeline_dirs / "model")
    assert run(["recognize", "--config", c, "--data", data, "--model", str(pipeline_dirs / "model"),
                "--out", str(tmp_path / "rec")]) == 0
    assert _files(tmp_path / "rec") == _files(pipeline_dirs / "rec")


def test_training_log_csv(pipeline_dirs):
    lines = (pipeline_dirs / "model" / "training_log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss_total,loss_ccl,loss_pc,alignment,uniformity"
    assert len(lines) == 3


def test_manifest_reproduces_run(pipeline_dirs, tmp_path):
    m = json.loads((pipeline_dirs / "model" / "run_manifest.json").read_text())
    cfg = tmp_path / "from_manifest.json"
    cfg.write_text(json.dumps(m["config"]))
    assert run(["match", "--config", str(cfg), "--data", m["inputs"]["data"],
                "--out", str(tmp_path / "m")]) == 0
    assert _files(tmp_path / "m") == _files(pipeline_dirs / "model")


def test_recognize_alpha_zero_matches_linear(pipeline_dirs, tmp_path):
    c = str(pipeline_dirs / "c.json")
    assert run(["recognize", "--config", c, "--data", str(pipeline_dirs / "data"),
                "--model", str(pipeline_dirs / "model"), "--out", str(tmp_path / "r"),
                "--alpha", "0"]) == 0
    reps = json.loads((tmp_path / "r" / "reports.json").read_text())
    assert reps["fused"] == reps["linear"]
    rows = (tmp_path / "r" / "reports.csv").read_text().splitlines()
    assert rows[0].startswith("classifier,alignment,uniformity,k,")
    assert rows[1].split(",")[1:] == rows[3].split(",")[1:]


def test_ablate_csv(pipeline_dirs, tmp_path):
    c = str(pipeline_dirs / "c.json")
    assert run(["ablate", "--config", c, "--data", str(pipeline_dirs / "data"), "--axis", "proto_init",
                "--out", str(tmp_path / "a")]) == 0
    lines = (tmp_path / "a" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "proto_init,acc_all,acc_many,acc_med,acc_few,alignment,uniformity"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["anchored", "random"]


@pytest.mark.slow
def test_ablate_lambda_default_spec(tmp_path):
    assert run(["generate", "--out", str(tmp_path / "d")]) == 0
    assert run(["ablate", "--data", str(tmp_path / "d"), "--axis", "lambda",
                "--out", str(tmp_path / "a")]) == 0
    lines = (tmp_path / "a" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "lambda,acc_all,acc_many,acc_med,acc_few,alignment,uniformity"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.1", "0.3", "0.5", "0.7", "0.9"]


def test_eval_repeated_vectors_alignment_zero(tmp_path):
    X = np.repeat(np.eye(4), 3, axis=0)
    y = np.repeat(np.arange(4), 3)
    write_embeddings(tmp_path / "f.prto", X)
    write_labels(tmp_path / "l.prto", y)
    write_labels(tmp_path / "p.prto", y)
    write_labels(tmp_path / "t.prto", np.repeat(np.arange(4), [150, 50, 10, 10]))
    assert run(["eval", "--features", str(tmp_path / "f.prto"), "--labels", str(tmp_path / "l.prto"),
                "--predictions", str(tmp_path / "p.prto"), "--train-labels", str(tmp_path / "t.prto"),
                "--k-uniformity", "1", "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["alignment"] == 0.0
    assert rep["uniformity"] == pytest.approx(np.sqrt(2))
    assert rep["accuracy_many"] == 1.0 and rep["accuracy_few"] == 1.0


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"data": {"imbalance": 0.5}}')
    assert run(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["field"] == "data.imbalance" and "imbalance" in err["message"]
    assert not (tmp_path / "o").exists()
    assert [n for n in os.listdir(tmp_path) if n.startswith(".protomatch")] == []


def test_bad_flag_value_exit_2(tmp_path):
    assert run(["generate", "--out", str(tmp_path / "o"), "--seed", "x"]) == 2
    assert run(["match", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--lambda", "-1"]) == 2


def test_missing_input_exit_3(tmp_path, capsys):
    assert run(["match", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    assert json.loads(capsys.readouterr().err.strip())["error"] == "io"
    assert not (tmp_path / "o").exists()


def test_nan_input_exit_4(tmp_path, capsys):
    p = tmp_path / "f.prto"
    write_embeddings(p, np.ones((2, 2)))
    raw = bytearray(p.read_bytes())
    raw[24:28] = np.array([np.nan], "<f4").tobytes()
    p.write_bytes(bytes(raw))
    write_labels(tmp_path / "l.prto", [0, 1])
    assert run(["eval", "--features", str(p), "--labels", str(tmp_path / "l.prto"),
                "--k-uniformity", "1", "--out", str(tmp_path / "o")]) == 4
    assert json.loads(capsys.readouterr().err.strip())["error"] == "numerical"


def test_failed_run_leaves_previous_outputs(pipeline_dirs, tmp_path):
    out = tmp_path / "o"
    c = str(pipeline_dirs / "c.json")
    assert run(["generate", "--config", c, "--out", str(out)]) == 0
    before = _files(out)
    assert run(["generate", "--config", c, "--out", str(out), "--k-uniformity", "0"]) == 2
    assert _files(out) == before


def test_outputs_readable(pipeline_dirs):
    assert read_embeddings(pipeline_dirs / "model" / "prototypes.prto").shape == (12, 16)
    assert read_labels(pipeline_dirs / "data" / "test_labels.prto").shape == (72,)
