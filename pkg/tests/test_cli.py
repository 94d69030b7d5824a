import json
import subprocess
import sys

import numpy as np
import pytest

from prunescope import wtns
from prunescope.cli import main


@pytest.fixture
def w3(tmp_path):
    path = tmp_path / "w3.wtns"
    wtns.save(path, {"w": np.array([1.0, -3.0, 2.0]), "w.bias": np.array([0.5])})
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def analyze(capsys, orig, pruned, *extra):
    code, out, err = run(capsys, "analyze", "--orig", orig, "--pruned", pruned, *extra)
    assert code == 0, err
    return json.loads(out)


def test_analyze_identical(capsys, w3):
    for latent in ("gaussian-diag", "gaussian-nondiag"):
        result = analyze(capsys, w3, w3, "--latent", latent)
        assert result["ap2"] == 0.0 and result["ap3"] == 0.0
        assert result["tensors"] == ["w"]
    result = analyze(capsys, w3, w3, "--latent", "student", "--samples", "2000")
    assert result["ap3"] == 0.0 and result["ap3_method"] == "monte-carlo"


@pytest.mark.parametrize("method,bits,ap2", [("lowest", [0, 1, 1], 1.0), ("highest", [1, 0, 1], 9.0)])
def test_prune_then_analyze(capsys, tmp_path, w3, method, bits, ap2):
    out = tmp_path / f"{method}.wtns"
    code, _, err = run(capsys, "prune", "--weights", w3, "--method", method, "--fraction", repr(1 / 3), "--out", out)
    assert code == 0, err
    pruned = wtns.load(out)
    assert pruned["w.mask"].tolist() == bits
    assert pruned["w.bias"].tolist() == [0.5]
    result = analyze(capsys, w3, out, "--latent", "gaussian-diag")
    assert result["ap2"] == ap2
    assert result["ap3"] == ap2 / 2
    assert result["tv_lower_bound"] == ap2 / (2 * 6 + ap2)


def test_prune_random_requires_seed(capsys, tmp_path, w3):
    code, _, err = run(capsys, "prune", "--weights", w3, "--method", "random", "--fraction", "0.5", "--out", tmp_path / "r.wtns")
    assert code == 1 and "--seed" in err
    code, _, _ = run(capsys, "prune", "--weights", w3, "--method", "random", "--fraction", "0.5", "--seed", "4", "--out", tmp_path / "r.wtns")
    assert code == 0
    assert int(np.sum(wtns.load(tmp_path / "r.wtns")["w.mask"] == 0)) == 1


def test_usage_errors(capsys, w3):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "prune", "--weights", w3)[0] == 1
    assert run(capsys, "prune", "--weights", w3, "--method", "lowest", "--fraction", "2", "--out", "x")[0] == 1
    assert run(capsys, "analyze", "--orig", w3, "--pruned", w3, "--latent", "cauchy")[0] == 1


def test_unknown_subcommand_via_module():
    proc = subprocess.run([sys.executable, "-m", "prunescope", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage:" in proc.stderr


def test_data_errors(capsys, tmp_path, w3):
    bad = tmp_path / "bad.wtns"
    bad.write_bytes(b"garbage")
    assert run(capsys, "analyze", "--orig", bad, "--pruned", w3, "--latent", "gaussian-diag")[0] == 2
    other = tmp_path / "other.wtns"
    wtns.save(other, {"w": np.zeros(4)})
    code, _, err = run(capsys, "analyze", "--orig", w3, "--pruned", other, "--latent", "gaussian-diag")
    assert code == 2 and "DimensionMismatch" in err
    assert run(capsys, "prune", "--weights", w3, "--method", "lowest", "--fraction", "0.5", "--tensor", "nope", "--out", tmp_path / "x")[0] == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("trial,method,fraction,epoch,ap2\n")
    assert run(capsys, "report", "--records", empty, "--out", tmp_path / "rep")[0] == 2


def test_numerical_error_exit_code(capsys, tmp_path):
    a, b = tmp_path / "a.wtns", tmp_path / "b.wtns"
    wtns.save(a, {"w": np.zeros(2)})
    wtns.save(b, {"w": np.ones(2)})
    # a zero latent covariance is rejected as not positive definite
    code, _, err = run(capsys, "analyze", "--orig", a, "--pruned", b, "--latent", "gaussian-diag", "--sigma", "1e-7")
    assert code == 3 and "NotPositiveDefinite" in err


def test_train_experiment_report(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("PRUNESCOPE_THREADS", "1")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "blobs", "classes": 3, "n_per_class": 20, "spread": 1.0, "dim": 2},
        "model_dims": [2, 4, 3], "train": {"epochs": 2}, "finetune_epochs": 1,
        "fractions": [0.5], "trials": 1, "master_seed": 3, "output_dir": str(tmp_path / "ignored"),
    }))
    code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path / "train")
    assert code == 0, err
    assert wtns.model_from_tensors(wtns.load(tmp_path / "train" / "baseline.wtns")).layer_dims == [2, 4, 3]
    assert len(json.loads((tmp_path / "train" / "history.json").read_text())["history"]) == 2

    code, out, err = run(capsys, "experiment", "--config", cfg, "--out", tmp_path / "run")
    assert code == 0, err
    assert json.loads(out)["rows"] == 3 * 2
    assert not (tmp_path / "ignored").exists()

    code, out, _ = run(capsys, "report", "--records", tmp_path / "run" / "records.csv", "--out", tmp_path / "rep")
    assert code == 0
    assert "correlations" in json.loads(out)
    assert (tmp_path / "rep" / "method_lowest_ap2.svg").exists()


def test_bad_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert run(capsys, "experiment", "--config", cfg)[0] == 2
