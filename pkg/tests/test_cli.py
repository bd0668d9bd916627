import contextlib
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import make_peak, make_profile
from strnoc.cli import main
from strnoc.encoder import build_labels, write_tensor_cache
from strnoc.simulator import write_dataset

GOLDEN = Path(__file__).parent / "golden"


def run(args, capsys=None):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in args])
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("cmd", ["", "simulate", "encode", "train", "finetune", "predict", "eval",
                                 "explain", "mac"])
def test_help_matches_golden(cmd, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    code, out, _ = run(([cmd] if cmd else []) + ["--help"])
    assert code == 0
    assert out == (GOLDEN / f"help_{cmd or 'main'}.txt").read_text(encoding="utf-8")


def test_usage_errors():
    assert run([])[0] == 1
    assert run(["bogus"])[0] == 1
    assert run(["simulate", "--n", "3"])[0] == 1
    code, _, err = run(["simulate", "--n", "x", "--out", "o.jsonl"])
    assert code == 1 and "invalid int" in err


def test_bad_noc_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NOC_SEED", "abc")
    assert run(["simulate", "--n", "2", "--out", tmp_path / "d.jsonl"])[0] == 1


def test_data_errors(tmp_path):
    assert run(["mac", "--in", tmp_path / "missing.jsonl"])[0] == 2
    bad = tmp_path / "bad.dnoc"
    bad.write_bytes(b"garbage")
    assert run(["train", "--in", bad, "--out", tmp_path / "m"])[0] == 2
    w = tmp_path / "w.dnocw"
    w.write_bytes(b"DNOCW1\x01")
    assert run(["predict", "--model", w, "--in", bad, "--out", tmp_path / "p.json"])[0] == 2


def test_numerical_failure_exit_code(tmp_path):
    prof = make_profile([make_peak(0, 12, 500)])
    t = np.zeros((24, 50, 89), np.float32)
    t[0, 0, 0] = 1.0
    t[0, 0, 26] = np.nan
    path = tmp_path / "nan.dnoc"
    write_tensor_cache(path, [(t, build_labels(prof))] * 2, 2)
    code, _, err = run(["train", "--in", path, "--out", tmp_path / "m", "--epochs", "1"])
    assert code == 3
    assert "numerical failure" in err


def test_simulate_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert run(["simulate", "--n", 10, "--seed", 7, "--out", tmp_path / f"{name}.jsonl"])[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 10
    assert all(1 <= json.loads(x)["noc"] <= 10 for x in lines)


def test_noc_seed_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("NOC_SEED", "7")
    run(["simulate", "--n", 3, "--out", tmp_path / "env.jsonl"])
    run(["simulate", "--n", 3, "--seed", 7, "--out", tmp_path / "flag.jsonl"])
    assert (tmp_path / "env.jsonl").read_bytes() == (tmp_path / "flag.jsonl").read_bytes()


def test_mac_prints_two_for_three_alleles(tmp_path):
    prof = make_profile([make_peak(0, a, 500) for a in (10, 11, 12)])
    write_dataset([prof], tmp_path / "one.jsonl")
    code, out, _ = run(["mac", "--in", tmp_path / "one.jsonl"])
    assert code == 0 and out.strip() == "2"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run(["simulate", "--n", 20, "--seed", 5, "--noc-max", 3, "--out", d / "d.jsonl"])[0] == 0
    assert run(["encode", "--in", d / "d.jsonl", "--out", d / "d.dnoc"])[0] == 0
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 2, "batch_size": 8, "lr": 1e-3, "seed": 1}))
    assert run(["train", "--in", d / "d.dnoc", "--config", cfg, "--out", d / "m", "--deterministic"])[0] == 0
    return d


def test_encode_and_train_deterministic(pipeline, tmp_path):
    d = pipeline
    assert run(["encode", "--in", d / "d.jsonl", "--out", tmp_path / "d2.dnoc"])[0] == 0
    assert (d / "d.dnoc").read_bytes() == (tmp_path / "d2.dnoc").read_bytes()
    assert run(["train", "--in", d / "d.dnoc", "--config", d / "cfg.json", "--out", tmp_path / "m",
                "--deterministic"])[0] == 0
    assert (d / "m" / "model.dnocw").read_bytes() == (tmp_path / "m" / "model.dnocw").read_bytes()
    assert (d / "m" / "split.json").read_bytes() == (tmp_path / "m" / "split.json").read_bytes()


def test_train_outputs(pipeline):
    m = pipeline / "m"
    card = json.loads((m / "model.dnocw.json").read_text())
    assert card["main_branch_depth"] == 16
    assert card["train_config"]["epochs"] == 2
    split = json.loads((m / "split.json").read_text())
    assert (len(split["train"]), len(split["test"])) == (18, 2)


def test_eval_matches_final_test_accuracy(pipeline):
    d = pipeline
    code, out, _ = run(["eval", "--model", d / "m", "--in", d / "d.jsonl", "--report", d / "r.json",
                        "--split", d / "m" / "split.json"])
    assert code == 0
    assert out.startswith("Pred\\Known")
    rep = json.loads((d / "r.json").read_text())
    hist = json.loads((d / "m" / "history.json").read_text())
    assert rep["overall_accuracy"] == pytest.approx(hist["epochs"][-1]["test_accuracy"])
    assert rep["n"] == 2
    assert len(rep["threshold_curve"]) > 5


def test_eval_custom_thresholds(pipeline):
    d = pipeline
    assert run(["eval", "--model", d / "m", "--in", d / "d.dnoc", "--report", d / "r2.json",
                "--thresholds", "0.5", "0.9"])[0] == 0
    rep = json.loads((d / "r2.json").read_text())
    assert [r["threshold"] for r in rep["threshold_curve"]] == [0.5, 0.9]
    assert rep["n"] == 20


def test_predict_explain_finetune(pipeline):
    d = pipeline
    assert run(["predict", "--model", d / "m" / "model.dnocw", "--in", d / "d.jsonl",
                "--out", d / "p.json"])[0] == 0
    preds = json.loads((d / "p.json").read_text())
    assert len(preds) == 20 and all(abs(sum(p["probabilities"]) - 1) < 1e-5 for p in preds)
    code, out, _ = run(["explain", "--model", d / "m", "--in", d / "d.jsonl", "--index", 3, "--out", d / "ex"])
    assert code == 0
    assert (d / "ex" / "profile3.svg").exists() and (d / "ex" / "profile3.json").exists()
    assert run(["explain", "--model", d / "m", "--in", d / "d.jsonl", "--index", 99,
                "--out", d / "ex"])[0] == 1
    assert run(["simulate", "--n", 6, "--seed", 9, "--noc-max", 3, "--laboratory",
                "--out", d / "lab.jsonl"])[0] == 0
    assert run(["finetune", "--model", d / "m", "--in", d / "lab.jsonl", "--out", d / "m2",
                "--epochs", 1])[0] == 0
    assert (d / "m2" / "model.dnocw").exists()
    hist = json.loads((d / "m2" / "history.json").read_text())
    assert hist["epochs"][0]["steps"] == 1


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "strnoc.cli", "mac", "--in", tmp_path / "nope.jsonl"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "file not found" in r.stderr
