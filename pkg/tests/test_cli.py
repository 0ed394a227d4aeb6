import json
import os
import subprocess
import sys

import numpy as np
import pytest

from approxbp import _jsonio
from approxbp.approximator import coeffile, objective
from approxbp.cli import main


def run_cli(*args, cwd=None):
    proc = subprocess.run([sys.executable, "-m", "approxbp.cli", *args], capture_output=True, text=True, cwd=cwd)
    return proc.returncode, proc.stdout, proc.stderr


def read_all(paths):
    return {p: open(p, "rb").read() for p in paths}


# ---- fit

def test_fit_writes_coefficients_and_manifest(tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["fit", "--activation", "gelu", "--restarts", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "objective_value" in text and "constraint_residual" in text
    p = coeffile.load(out)
    assert abs(p.objective_value - objective("gelu", p)) <= 1e-9 * p.objective_value
    man = _jsonio.load(tmp_path / "g.manifest.json")
    assert man["command"] == "fit" and man["outputs"] == [str(out)]
    assert man["flags"]["restarts"] == 1 and man["seed"] == 0
    assert "time" not in json.dumps(man)


def test_fit_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        code, _, _ = run_cli("fit", "--activation", "silu", "--restarts", "1", "--out", "c.json", cwd=d)
        assert code == 0
        outs.append(read_all([d / "c.json", d / "c.manifest.json"]))
    assert list(outs[0].values()) == list(outs[1].values())


@pytest.mark.parametrize("args", [
    ["--bits", "1"], ["--epsilon", "0"], ["--epsilon", "1.5"], ["--restarts", "0"],
])
def test_fit_bad_flags_exit_2(tmp_path, args):
    assert main(["fit", *args, "--out", str(tmp_path / "x.json")]) == 2


def test_fit_unwritable_path_exit_2(tmp_path):
    assert main(["fit", "--out", str(tmp_path / "missing" / "x.json")]) == 2


def test_argparse_errors_exit_2():
    code, _, err = run_cli("fit", "--activation", "relu", "--out", "x.json")
    assert code == 2 and "invalid choice" in err
    code, _, _ = run_cli("nonsense")
    assert code == 2


# ---- gradcheck

def test_gradcheck_default_toy(capsys):
    assert main(["gradcheck", "--trials", "3"]) == 0
    out = capsys.readouterr().out
    for kind in ("linear", "lora", "lorafa", "regelu2", "msln", "msrms", "residual", "graph"):
        assert kind in out
    assert "FAIL" not in out


def test_gradcheck_frozen_only(tmp_path, capsys):
    cfg = {"input_dim": 3, "layers": [{"type": "linear", "out": 4, "trainable": False},
                                      {"type": "linear", "out": 2, "trainable": False}], "loss": "mse"}
    path = tmp_path / "frozen.json"
    _jsonio.dump(cfg, path)
    assert main(["gradcheck", "--config", str(path), "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert "trainable parameters: 0" in out


def test_gradcheck_corrupted_levels_exit_1(tmp_path, capsys):
    levels = tmp_path / "levels.json"
    _jsonio.dump({"thresholds": [-3.0, 0.0, 3.0], "levels": [0.0, -0.05, 1.05, 0.97]}, levels)
    cfg = {"input_dim": 3, "layers": [{"type": "linear", "out": 4},
                                      {"type": "activation", "kind": "regelu2", "coefficients": str(levels)},
                                      {"type": "linear", "out": 1}], "loss": "mse"}
    path = tmp_path / "m.json"
    _jsonio.dump(cfg, path)
    assert main(["gradcheck", "--config", str(path)]) == 1
    assert "last level must be 1" in capsys.readouterr().err


def test_gradcheck_fails_with_exit_1_when_tolerance_unmet(capsys):
    assert main(["gradcheck", "--trials", "1", "--tolerance", "1e-14"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_config_errors_exit_2(tmp_path):
    assert main(["gradcheck", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gradcheck", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"input_dim": 2, "layers": [{"type": "pool"}]}))
    assert main(["gradcheck", "--config", str(bad)]) == 2


# ---- train

def test_train_outputs(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["train", "--activation", "regelu2", "--norm", "msln", "--steps", "20", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,loss,grad_gap"
    assert len(lines) == 21
    step, loss, gap = lines[1].split(",")
    assert step == "0" and float(loss) > 0 and 0 < float(gap) < 1
    ledger = _jsonio.load(tmp_path / "t.ledger.json")
    tokens = 64
    for node in ("1:activation", "4:activation"):
        assert ledger["per_node"][node] == -(-tokens * 64 // 4)
    meta = _jsonio.load(tmp_path / "t.params.json")
    raw = np.fromfile(tmp_path / "t.params.bin", dtype="<f8")
    assert raw.size == meta["count"] == sum(int(np.prod(p["shape"])) for p in meta["parameters"])
    man = _jsonio.load(tmp_path / "t.manifest.json")
    assert man["command"] == "train" and len(man["outputs"]) == 4


def test_train_plain_gelu_has_no_gap(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["train", "--activation", "gelu", "--steps", "3", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].endswith(",")


def test_train_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        code, _, _ = run_cli("train", "--activation", "resilu2", "--norm", "msrms", "--steps", "40",
                             "--seed", "5", "--out", "run.csv", cwd=d)
        assert code == 0
        files = sorted(os.listdir(d))
        outs.append([(f, (d / f).read_bytes()) for f in files])
    assert outs[0] == outs[1]


def test_train_missing_coefficients_exit_2(tmp_path, capsys):
    code = main(["train", "--activation", "regelu2", "--coefficients", str(tmp_path / "no.json"),
                 "--out", str(tmp_path / "t.csv")])
    assert code == 2
    err = capsys.readouterr().err
    assert "approxbp fit" in err


def test_train_with_fitted_coefficients(tmp_path):
    coef = tmp_path / "g.json"
    coeffile.save(coeffile.shipped("gelu", "derivative"), coef)
    out = tmp_path / "t.csv"
    assert main(["train", "--activation", "regelu2", "--coefficients", str(coef), "--steps", "5",
                 "--out", str(out)]) == 0


def test_train_wrong_coefficient_activation_exit_2(tmp_path):
    coef = tmp_path / "s.json"
    coeffile.save(coeffile.shipped("silu"), coef)
    assert main(["train", "--activation", "regelu2", "--coefficients", str(coef), "--steps", "2",
                 "--out", str(tmp_path / "t.csv")]) == 2


# ---- memreport

def test_memreport_outputs(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["memreport", "--arch", "vit-b", "--out", str(out)]) == 0
    rep = _jsonio.load(out)
    assert abs(rep["operator_percent"]["act"] - 21.05) <= 2
    assert "activation" in capsys.readouterr().out
    assert (tmp_path / "m.manifest.json").exists()


def test_memreport_is_byte_identical(tmp_path):
    blobs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        assert run_cli("memreport", "--arch", "llama-13b", "--scheme", "ours", "--out", "r.json", cwd=d)[0] == 0
        blobs.append(((d / "r.json").read_bytes(), (d / "r.manifest.json").read_bytes()))
    assert blobs[0] == blobs[1]


def test_memreport_unknown_arch_exit_2(capsys):
    assert main(["memreport", "--arch", "resnet"]) == 2
    assert "unsupported architecture" in capsys.readouterr().err
