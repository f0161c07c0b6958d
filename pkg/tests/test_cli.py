import csv
import json
import subprocess
import sys

import pytest

from pdecontrol.bench import CSV_HEADER
from pdecontrol.cli import configs_from_json, main


def test_heat_bench_json(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["heat-bench", "--level", "3", "--beta", "1e-2", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())[0]
    assert rec["scheme"] == "cn" and rec["converged"] and rec["iters"] > 0


def test_heat_bench_be_csv(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["heat-bench", "--level", "3", "--beta", "1e-2", "--scheme", "be",
                 "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == CSV_HEADER and rows[1][0] == "be"


def test_cd_bench_stdout(capsys):
    assert main(["cd-bench", "--level", "3", "--beta", "1e-3", "--epsilon", "0.05"]) == 0
    rec = json.loads(capsys.readouterr().out)[0]
    assert rec["epsilon"] == 0.05 and rec["y_error"] is None


def test_unconverged_run_exits_nonzero(tmp_path):
    assert main(["heat-bench", "--level", "3", "--beta", "1e-2", "--maxit", "2",
                 "--out", str(tmp_path / "x.json")]) == 1


def test_bad_arguments():
    assert main(["heat-bench", "--level", "3", "--beta", "-1"]) == 2
    with pytest.raises(SystemExit) as e:
        main(["heat-bench", "--level", "3"])
    assert e.value.code == 2


def test_table_config(tmp_path):
    cfg = {"sweep": {"problem": "cd", "levels": [3], "betas": [1e-2, 1e-4], "epsilons": [0.05]},
           "runs": [{"level": 3, "beta": 1e-2, "precond": {"mg_cycles": 4}}],
           "rtol": 1e-6}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    configs = configs_from_json(cfg)
    assert len(configs) == 3 and configs[0].precond.mg_cycles == 4
    out = tmp_path / "o.csv"
    assert main(["table", "--config", str(path), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 4


def test_table_with_refused_run(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"runs": [{"level": 7, "scheme": "be", "beta": 1e-2}]}))
    assert main(["table", "--config", str(path), "--out", str(tmp_path / "o.json")]) == 1
    assert json.loads((tmp_path / "o.json").read_text())[0]["status"] == "out of memory"


def test_eig_verify(tmp_path, capsys):
    out = tmp_path / "e.csv"
    assert main(["eig-verify", "--level", "3", "--beta-list", "1e-2", "1e-4",
                 "--epsilon", "0.01", "--wind", "recirculating", "--out", str(out)]) == 0
    assert capsys.readouterr().out.count("PASS") == 2
    lines = out.read_text().splitlines()
    assert lines[0] == "beta,index,eigenvalue" and len(lines) == 1 + 2 * 49 * 8


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "pdecontrol.cli", "eig-verify", "--level", "2",
                        "--beta-list", "1e-3", "--epsilon", "1", "--wind", "zero",
                        "--out", str(tmp_path / "e.csv")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
