import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from nodalprice.cli import main, run
from nodalprice.scenarios import builtin_document


def lmp(text):
    return {(e["node"], e["hour"]): e["price"] for e in json.loads(text)["lmp"]}


def test_solve_golden():
    code, out = run(["solve", "--builtin", "ramp2h", "--x", "0.5,0.25", "--format", "json"])
    assert code == 0
    prices = lmp(out)
    assert prices[("n1", 1)] == pytest.approx(8.875, abs=1e-10)
    assert prices[("n1", 2)] == pytest.approx(13.125, abs=1e-10)


def test_solve_single_node_csv():
    code, out = run(["solve", "--builtin", "single-node-linear", "--x", "0", "--format", "csv"])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["node", "hour", "price"]
    assert float(rows[1][2]) == pytest.approx(2.0)


def test_solve_bad_path():
    code, out = run(["solve", "--scenario", "/nonexistent/scenario.json"])
    assert code == 1 and out.startswith("error:")


def test_solve_invalid_scenario(tmp_path):
    doc = builtin_document("dc3")
    doc["lines"][0]["to"] = "Q"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, out = run(["solve", "--scenario", str(path)])
    assert code == 1 and "Q" in out


def test_solve_infeasible_exit_2(tmp_path):
    doc = builtin_document("single-node-linear")
    doc["units"][0].update({"pmin": 500, "pmax": 500})
    path = tmp_path / "big.json"
    path.write_text(json.dumps(doc))
    assert run(["solve", "--scenario", str(path)])[0] == 2


def test_wrong_x_length_is_input_error():
    code, out = run(["sense", "--builtin", "ramp2h", "--x", "0.5"])
    assert code == 1 and "expected 2" in out


def test_bad_arguments_exit_1():
    assert run(["solve"])[0] == 1
    assert run(["sense", "--builtin", "ramp2h", "--x", "a,b"])[0] == 1


def test_sense_csv():
    code, out = run(["sense", "--builtin", "ramp2h", "--x", "0.5,0.25", "--format", "csv", "--route", "kkt"])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    M = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(M, [[-0.5, 0.5], [0.5, -0.5]], atol=1e-12)


def test_sense_single_node_default_x():
    code, out = run(["sense", "--builtin", "single-node-linear", "--format", "json"])
    assert code == 0
    doc = json.loads(out)
    for route in ("kkt", "projection", "fd"):
        assert doc["routes"][route][0][0] == pytest.approx(-0.1, abs=1e-8)
    assert doc["definiteness"] == "negative-definite"


def test_sense_nonsmooth_exit_3():
    code, out = run(["sense", "--builtin", "ramp2h", "--x", "0.5,5.5", "--route", "fd"])
    assert code == 3 and "nonsmooth" in out


def test_check_exit_codes():
    code, out = run(["check", "--builtin", "ramp2h", "--x", "0.5,0.25", "--format", "json"])
    assert code == 0 and json.loads(out)["guarantee"] == "symmetry+NSD"
    assert run(["check", "--builtin", "marginal-firm"])[0] == 4
    assert run(["check", "--builtin", "firm-ramp", "--hat", "n1@2"])[0] == 5


def test_verify_exit_codes():
    assert run(["verify", "--builtin", "ramp2h", "--x", "0.5,0.25"])[0] == 0
    assert run(["verify", "--builtin", "dc3", "--seed", "7"])[0] == 0
    code, out = run(["verify", "--builtin", "loss2", "--fd-step", "10", "--format", "json"])
    assert code == 6 and json.loads(out)["breaches"] == ["kkt-fd"]


@pytest.mark.parametrize("argv", [
    ["solve", "--builtin", "dc3"],
    ["sense", "--builtin", "ramp2h", "--x", "0.5,0.25"],
    ["check", "--builtin", "ramp2h", "--x", "0.5,0.25"],
    ["verify", "--builtin", "single-node-linear"],
])
def test_json_is_deterministic(argv):
    a = run(argv + ["--format", "json"])
    b = run(argv + ["--format", "json"])
    assert a == b
    json.loads(a[1])


def test_main_writes_output_file(tmp_path):
    target = tmp_path / "out.json"
    code = main(["solve", "--builtin", "dc3", "--format", "json", "--output", str(target)])
    assert code == 0
    assert json.loads(target.read_text())["status"] == "optimal"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nodalprice.cli", "check", "--builtin", "marginal-firm"],
                          capture_output=True, text=True)
    assert proc.returncode == 4
    assert "guarantee: none" in proc.stdout
