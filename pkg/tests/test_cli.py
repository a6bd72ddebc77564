import io
import json
import subprocess
import sys

import pytest

from onlinebudget.cli import main
from onlinebudget.harness import build_exp1
from onlinebudget.model import save_instance

EXP1 = ["exp1", "--setting", "uniform", "--alpha", "1", "--beta", "0", "--T", "100", "--m", "2", "--c", "20", "--saa-samples", "1000"]


def test_exp1_writes_files(tmp_path, capsys):
    out = tmp_path / "a" / "b"
    assert main(EXP1 + ["--trials", "4", "--seed", "1", "--out", str(out), "--threads", "1"]) == 0
    assert (out / "trials.csv").read_text().splitlines()[0] == "trial,policy,reward,hindsight,regret,max_dual,clip_count"
    doc = json.loads((out / "summary.json").read_text())
    assert doc["config"]["seed"] == 1 and doc["config"]["alpha"] == 1.0
    assert "igdp" in capsys.readouterr().out


def test_identical_invocations_give_identical_artifacts(tmp_path):
    for name in ("x", "y"):
        assert main(EXP1 + ["--trials", "3", "--seed", "5", "--out", str(tmp_path / name), "--threads", "1"]) == 0
    assert (tmp_path / "x" / "trials.csv").read_bytes() == (tmp_path / "y" / "trials.csv").read_bytes()


def test_missing_seed_is_usage_error(capsys):
    assert main(EXP1 + ["--trials", "2"]) == 2
    assert "--seed" in capsys.readouterr().err


def test_unknown_subcommand_and_flag():
    assert main(["exp9"]) == 2
    assert main(EXP1 + ["--seed", "1", "--bogus"]) == 2
    assert main([]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.startswith("onlinebudget ")


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 2, "seed": 3, "T": 60, "m": 1, "c": 10, "saa_samples": 500, "policies": "ugd"}))
    assert main(["exp1", "--config", str(cfg), "--out", str(tmp_path / "o"), "--threads", "1", "--trials", "3"]) == 0
    doc = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert doc["config"]["trials"] == 3 and doc["config"]["seed"] == 3 and doc["config"]["T"] == 60
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trails": 2}))
    assert main(["exp1", "--config", str(bad), "--seed", "1"]) == 2


def test_lp_infeasible_is_a_result(monkeypatch, capsys):
    prob = {"objective": [1.0], "constraint_matrix": [[1.0]], "rhs": [-1.0], "var_lower": [0.0], "var_upper": [1.0]}
    monkeypatch.setattr(sys, "stdin", io.StringIO(json.dumps(prob)))
    assert main(["lp"]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "Infeasible"


def test_lp_bad_input_is_domain_error(tmp_path):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"objective": [1.0], "oops": 1}))
    assert main(["lp", str(f)]) == 1
    f.write_text("{")
    assert main(["lp", str(f)]) == 1


def test_adversarial_and_scaling(tmp_path, capsys):
    assert main(["adversarial", "--kind", "egg_pair", "--eps", "0.1", "--T", "30", "--trials", "2", "--seed", "1", "--threads", "1", "--policies", "fbp,igdp"]) == 0
    assert main(["scaling", "--policy", "ugd", "--T", "100,200", "--trials", "2", "--seed", "1", "--threads", "1", "--out", str(tmp_path / "s")]) == 0
    rows = json.loads((tmp_path / "s" / "scaling.json").read_text())["rows"]
    assert [r["T"] for r in rows] == [100, 200]
    assert (tmp_path / "s" / "scaling.csv").exists()


def test_exp2_small(tmp_path):
    args = ["exp2", "--alpha", "0.02", "--beta", "0", "--T", "40", "--resolve-every", "10", "--trials", "2", "--seed", "2", "--threads", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    names = {line.split(",")[1] for line in (tmp_path / "trials.csv").read_text().splitlines()[1:]}
    assert names == {"igdp", "resolve", "igdp_resolve(10)"}


def test_wasserstein_subcommand(tmp_path, capsys):
    f = tmp_path / "inst.json"
    save_instance(build_exp1("uniform", 2, 1, T=1000, m=1, c=10), str(f))
    assert main(["wasserstein", str(f)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["wbdb"] == pytest.approx(500, abs=0.5)


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "onlinebudget.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("onlinebudget")


def test_policy_parameters_in_list(tmp_path):
    args = EXP1 + ["--trials", "2", "--seed", "1", "--threads", "1", "--policies", "bigd:5,ugd", "--out", str(tmp_path)]
    assert main(args) == 0
    names = [line.split(",")[1] for line in (tmp_path / "trials.csv").read_text().splitlines()[1:3]]
    assert names == ["bigd(K=5)", "ugd"]
    assert main(EXP1 + ["--trials", "2", "--seed", "1", "--policies", "bigd:x"]) == 2
