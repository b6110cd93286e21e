import json
import subprocess
import sys

import pytest

from conftest import CORPUS, data_path
from pmcreach.cli import parse_criterion, run_cli
from pmcreach.model import z_all, z_minus
from pmcreach.textio import REPORT_KEYS, write_report

UNKNOWN_MODEL = """pmc unk dimension 2
state a
state b
rule a -> a delta [0,1] zero {} weight 1
rule a -> a delta [1,0] zero {} weight 1
rule a -> a delta [-1,0] zero {} weight 1
rule a -> a delta [0,1] zero {2} weight 1
rule b -> b delta [1,1] zero {} weight 1
rule b -> b delta [1,1] zero {2} weight 1
"""

CRITICAL_MODEL = """pmc fair dimension 2
state q
rule q -> q delta [0,1] zero {} weight 1
rule q -> q delta [0,-1] zero {} weight 1
rule q -> q delta [0,1] zero {2} weight 1
"""


def cli(capsys, *argv):
    code = run_cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def cli_json(capsys, *argv):
    code, out, err = cli(capsys, "--json", *argv)
    assert code == 0, err
    rep = json.loads(out)
    assert list(rep) == list(REPORT_KEYS)
    assert write_report(rep) == out.rstrip("\n")
    return rep


@pytest.fixture
def model_file(tmp_path):
    def make(text, name="m.pmc"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


@pytest.mark.parametrize("name", CORPUS)
def test_validate_corpus(capsys, name):
    rep = cli_json(capsys, "validate", data_path(name))
    assert rep["result"]["valid"] and rep["model"]["hash"].startswith("sha256:")


def test_fig1_case1_qual(capsys):
    rep = cli_json(capsys, "analyze", "case1-qual", data_path("fig1.pmc"), "--state", "s", "--counters", "1,1")
    assert rep["result"]["verdict"] == "almost_sure"
    assert rep["initial"] == {"state": "s", "counters": [1, 1]}


def test_json_flag_after_subcommand(capsys):
    code, out, _ = cli(capsys, "analyze", "case1-qual", data_path("fig1.pmc"), "--json")
    assert code == 0 and json.loads(out)["result"]["verdict"] == "almost_sure"


def test_gambler_reports(capsys):
    rep = cli_json(capsys, "analyze", "case1-qual", data_path("gambler-up.pmc"))
    assert rep["result"]["verdict"] == "not_almost_sure" and rep["witnesses"]
    rep = cli_json(capsys, "approx", "case1", data_path("gambler-up.pmc"), "--eps", "1e-3")
    assert abs(rep["result"]["nu_float"] - 0.5) <= 1e-3
    rep = cli_json(capsys, "approx", "case1", data_path("gambler-down.pmc"), "--eps", "1e-3", "--relative")
    assert rep["result"]["nu_float"] == 1.0 and rep["result"]["relative"]


def test_botfin_model_qualitative(capsys):
    rep = cli_json(capsys, "analyze", "case1-qual", data_path("botfin2.pmc"))
    assert rep["result"]["verdict"] in ("almost_sure", "not_almost_sure")
    assert rep["constants"]["bsccs"]


def test_schema_is_stable(capsys):
    argv = ("--json", "approx", "case1", data_path("gambler-up.pmc"), "--eps", "1e-2")
    first = cli(capsys, *argv)[1]
    assert cli(capsys, *argv)[1] == first


def test_sqrtsum_case2(capsys):
    path = data_path("sqrtsum-4-2.pmc")
    rep = cli_json(capsys, "case2", "analyze", path, "--free-counter", "2")
    assert rep["result"] == {"verdict": "almost_sure", "free_counter": 2}
    rep = cli_json(capsys, "analyze", "reach", path, "--criterion", "minus:2")
    assert rep["result"]["verdict"] == "almost_sure"
    rep = cli_json(capsys, "case2", "approx", path, "--free-counter", "2", "--eps", "1e-2")
    assert 0 <= rep["result"]["nu_float"] <= 1 and abs(rep["result"]["nu_float"] - 1) <= 1e-2


def test_simulate(capsys):
    argv = ("simulate", data_path("gambler-up.pmc"), "--counters", "1", "--runs", "2000", "--max-steps", "5000",
            "--seed", "3")
    rep = cli_json(capsys, *argv)
    res = rep["result"]
    assert res["stopped"] + res["censored"] == 2000
    assert res["ci95"][0] <= res["estimate"] <= res["ci95"][1]
    assert abs(res["estimate"] - 0.5) < 0.05
    assert cli_json(capsys, *argv)["result"] == res
    rep = cli_json(capsys, "simulate", data_path("fig1.pmc"), "--criterion", "none", "--runs", "5", "--max-steps", "50")
    assert rep["result"]["stopped"] == 0


def test_text_output(capsys):
    code, out, _ = cli(capsys, "analyze", "case1-qual", data_path("gambler-down.pmc"))
    assert code == 0 and out.strip() == "verdict: almost_sure"


def test_exact_cap_option(capsys):
    a = cli_json(capsys, "--exact-cap", "0", "approx", "case1", data_path("gambler-up.pmc"), "--eps", "1e-3")
    b = cli_json(capsys, "approx", "case1", data_path("gambler-up.pmc"), "--eps", "1e-3", "--exact-cap", "500")
    assert abs(a["result"]["nu_float"] - b["result"]["nu_float"]) <= 2e-3


# --- exit codes --------------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    [],
    ["approx", "case1", "FIG1"],
    ["analyze", "case1-qual", "FIG1", "--state", "nowhere"],
    ["analyze", "case1-qual", "FIG1", "--counters", "1"],
    ["analyze", "case1-qual", "FIG1", "--counters", "1,x"],
    ["analyze", "case1-qual", "FIG1", "--counters", "1,-1"],
    ["analyze", "case1-qual", "FIG1", "--criterion", "minus:1"],
    ["case2", "analyze", "FIG1", "--free-counter", "3"],
    ["case2", "analyze", data_path("gambler-up.pmc"), "--free-counter", "1"],
    ["simulate", "FIG1", "--criterion", "{1,"],
    ["simulate", "FIG1", "--runs", "0"],
    ["validate", "/nonexistent/model.pmc"],
])
def test_usage_errors(capsys, argv):
    argv = [data_path("fig1.pmc") if a == "FIG1" else a for a in argv]
    code, out, err = cli(capsys, *argv)
    assert code == 1 and out == "" and err


def test_malformed_delta(capsys, model_file):
    path = model_file("pmc bad dimension 1\nstate q\nrule q -> q delta [2] zero {} weight 1\n")
    code, _, err = cli(capsys, "validate", path)
    assert code == 2 and "line 3, column 20" in err and "delta" in err


def test_invalid_model(capsys, model_file):
    path = model_file("pmc bad dimension 1\nstate q\nrule q -> r delta [1] zero {} weight 1\n")
    assert cli(capsys, "validate", path)[0] == 2


@pytest.mark.parametrize("crit", ["{{1,2}}", "{1,2}", "{1}"])
def test_undecidable_criteria(capsys, crit, model_file):
    path = data_path("fig1.pmc")
    if crit == "{1}":
        path = model_file("pmc three dimension 3\nstate q\nrule q -> q delta [1,1,1] zero {} weight 1\n")
    code, _, err = cli(capsys, "analyze", "reach", path, "--criterion", crit)
    assert code == 3 and "undecidable" in err


def test_critical_counter_exit(capsys, model_file):
    code, _, err = cli(capsys, "case2", "analyze", model_file(CRITICAL_MODEL), "--state", "q", "--counters", "3,1",
                       "--free-counter", "2")
    assert code == 4 and "critical" in err


def test_unknown_verdict_exit(capsys, model_file):
    code, out, _ = cli(capsys, "--json", "case2", "analyze", model_file(UNKNOWN_MODEL), "--free-counter", "2",
                       "--bound", "3")
    assert code == 5
    rep = json.loads(out)
    assert rep["result"]["verdict"] == "unknown" and rep["diagnostics"]["bound_exhausted"]


def test_node_budget_exit(capsys):
    code, out, err = cli(capsys, "analyze", "case1-qual", data_path("gambler-up.pmc"), "--node-budget", "1")
    assert code == 5 and "budget" in err


def test_parse_criterion():
    assert parse_criterion("all", 2) == z_all(2)
    assert parse_criterion("minus:2", 3) == z_minus(3, 2)
    assert parse_criterion("none", 2) is None
    assert parse_criterion("{{1},{2}}", 2) == z_all(2)


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pmcreach.cli", "validate", data_path("botfin2.pmc")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "pmcreach.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("pmcreach ")
