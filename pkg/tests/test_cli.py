import json

import pytest

from safereturn import data_path
from safereturn.cli import main
from safereturn.model import load_mdp


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def hw_plan(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    model = d / "hw.json"
    assert main(["build-grid", str(data_path("hardware.map")), "-o", str(model)]) == 0
    pl = d / "plan.json"
    assert main(["plan", "--model", str(model), "--task", "surveil(r1,r2)", "--return", "safe_return(bs)",
                 "--method", "hier", "--chi-o", "0.75", "--chi-r", "0.95", "-o", str(pl)]) == 0
    return model, pl


def test_build_grid(tmp_path, capsys):
    out = tmp_path / "m.json"
    code, text, _ = run(capsys, "build-grid", data_path("office.map"), "-o", out)
    assert code == 0 and "states" in text
    assert load_mdp(out).n_states == 71


def test_build_terrain_and_kind_checks(tmp_path, capsys):
    assert run(capsys, "build-terrain", data_path("terrain.map"), "-o", tmp_path / "t.json")[0] == 0
    code, _, err = run(capsys, "build-terrain", data_path("office.map"), "-o", tmp_path / "x.json")
    assert code == 1 and err.startswith("ERROR InvalidTerrain:")
    code, _, err = run(capsys, "build-grid", data_path("terrain.map"), "-o", tmp_path / "x.json")
    assert code == 1 and err.startswith("ERROR InvalidGrid:")


def test_missing_file_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "build-grid", tmp_path / "nope.map", "-o", tmp_path / "x.json")
    assert code == 1 and err.startswith("ERROR IOError:")
    assert err.count("\n") == 1


def test_automaton_output_and_certification(tmp_path, capsys):
    code, text, _ = run(capsys, "automaton", "surveil(a,b)")
    assert code == 0 and text.startswith("HOA: v1")
    assert run(capsys, "automaton", "surveil(a,b)", "--ltl", "G F a & G F b", "-o", tmp_path / "a.hoa")[0] == 0
    assert (tmp_path / "a.hoa").read_text().startswith("HOA: v1")
    code, _, err = run(capsys, "automaton", "surveil(a,b)", "--ltl", "G F a")
    assert code == 1 and err.startswith("ERROR LanguageMismatch:")


def test_plan_office_feasible(tmp_path, capsys):
    code, text, _ = run(capsys, "plan", "--model", data_path("office.map"), "--task", "surveil(r1,r2,r3)",
                        "--return", "safe_return(bs)", "--method", "hier", "--chi-o", "0.8", "--chi-r", "0.9",
                        "-o", tmp_path / "p.json")
    assert code == 0 and "hier plan" in text
    assert json.loads((tmp_path / "p.json").read_text())["method"] == "hier"


def test_plan_sweep_infeasible(tmp_path, capsys):
    code, _, err = run(capsys, "plan", "--model", data_path("sweep.map"), "--task", "surveil(r1,r2)",
                       "--return", "safe_return(bs)", "--chi-o", "0.9", "-o", tmp_path / "p.json")
    assert code == 2
    assert err.startswith("ERROR TaskInfeasible:") and "chi_o" in err
    assert not (tmp_path / "p.json").exists()


def test_plan_dumps(tmp_path, capsys):
    code, _, _ = run(capsys, "plan", "--model", data_path("sweep.map"), "--task", "surveil(r1,r2)",
                     "--return", "safe_return(bs)", "--chi-o", "0.5", "--method", "baseline",
                     "--dump-product", tmp_path / "prod.json", "--dump-lp", tmp_path / "lp.mps",
                     "-o", tmp_path / "p.json")
    assert code == 0
    assert json.loads((tmp_path / "prod.json").read_text())["amec"]
    mps = (tmp_path / "lp.mps").read_text()
    assert "ROWS" in mps and "COLUMNS" in mps and mps.rstrip().endswith("ENDATA")


def test_simulate_deterministic_with_figures(tmp_path, capsys, hw_plan):
    model, pl = hw_plan
    reports = []
    for k in range(2):
        stem = tmp_path / f"r{k}"
        code, _, _ = run(capsys, "simulate", "--model", model, "--plan", pl, "--runs", "1", "--seed", "7",
                         "--request", "geometric:0.02", "--traces", "-o", stem)
        assert code == 0
        reports.append([(tmp_path / f"r{k}{s}").read_bytes() for s in (".json", ".csv", "_traces.csv")])
        for fig in ("_costs.png", "_rates.png", "_visits.png"):
            assert (tmp_path / f"r{k}{fig}").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert reports[0] == reports[1]


def test_simulate_bad_request(tmp_path, capsys, hw_plan):
    model, pl = hw_plan
    code, _, err = run(capsys, "simulate", "--model", model, "--plan", pl, "--request", "poisson:2",
                       "-o", tmp_path / "r")
    assert code == 1 and err.startswith("ERROR InvalidInput:")


def test_simulate_wrong_model(tmp_path, capsys, hw_plan):
    _, pl = hw_plan
    code, _, err = run(capsys, "simulate", "--model", data_path("office.map"), "--plan", pl, "-o", tmp_path / "r")
    assert code == 1 and err.startswith("ERROR PlanModelMismatch:")


def test_heatmap(tmp_path, capsys, hw_plan):
    model, pl = hw_plan
    out = tmp_path / "v.csv"
    assert run(capsys, "heatmap", "--model", model, "--plan", pl, "-o", out)[0] == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "state_index,x,y,value" and len(rows) == 1 + load_mdp(model).n_states
    assert all(0.0 <= float(r.split(",")[3]) <= 1.0 for r in rows[1:])
    assert out.with_suffix(".png").exists()


def test_compare(tmp_path, capsys):
    out = tmp_path / "cmp.csv"
    code, text, _ = run(capsys, "compare", "--model", data_path("sweep.map"), "--task", "surveil(r1,r2)",
                        "--return", "safe_return(bs)", "--chi-o", "0.5", "0.9", "--chi-r", "0.9",
                        "--runs", "5", "--horizon", "100", "-o", out)
    assert code == 0
    lines = text.splitlines()
    assert len(lines) == 5
    # the infeasible cells show n/a
    assert sorted(ln.split()[2] == "n/a" for ln in lines[1:]) == [False, False, True, True]
    assert out.with_suffix(".png").exists()
