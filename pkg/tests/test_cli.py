import csv
import json

import pytest
from click.testing import CliRunner

from pdflow.cli import main

CASE_II = {"gamma": {"family": "power", "alpha": 4.0, "r": 1.0},
           "delta": {"kind": "reciprocal", "beta0": 0.6}}
FILES = ("trajectory.csv", "audit.json", "rates.csv")


def write(path, doc):
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


def invoke(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env, catch_exceptions=False)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def case_ii_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write(d / "c.json", CASE_II)
    res = invoke("run", cfg, "--out", str(d / "out"))
    return d, cfg, res


def test_run_writes_three_files(case_ii_run):
    d, _, res = case_ii_run
    assert res.exit_code == 0, res.output
    out = d / "out"
    assert sorted(p.name for p in out.iterdir()) == sorted(FILES)
    traj = rows(out / "trajectory.csv")
    assert list(traj[0]) == ["t", "feasibility", "gap", "energy", "speed_x", "speed_y", "speed_lambda"]
    assert len(traj) == 200 and float(traj[-1]["t"]) == 500.0
    rates = rows(out / "rates.csv")
    assert [r["quantity"] for r in rates] == ["gap", "feasibility", "speed"]
    assert all(r["pass"] == "true" for r in rates)
    audit = json.loads((out / "audit.json").read_text())
    assert audit["monotone"] is True and audit["first_violation"] is None
    assert set(audit["identity_residuals"]) == {"coupling", "velocity_cross"}


def test_rerun_is_byte_identical(case_ii_run):
    d, cfg, _ = case_ii_run
    assert invoke("run", cfg, "--out", str(d / "again")).exit_code == 0
    for name in FILES:
        assert (d / "out" / name).read_bytes() == (d / "again" / name).read_bytes()


def test_output_dir_from_environment(tmp_path):
    cfg = write(tmp_path / "c.json", {**CASE_II, "horizon": 20.0})
    res = invoke("run", cfg, env={"PDFLOW_OUT": str(tmp_path / "env")})
    assert res.exit_code == 0
    assert all((tmp_path / "env" / f).exists() for f in FILES)


def test_invalid_regime_exit_code(tmp_path):
    cfg = write(tmp_path / "c.json", {"gamma": {"family": "power", "alpha": 4.0, "r": -0.5},
                                      "delta": {"kind": "linear", "r0": 0.2}})
    res = invoke("run", cfg, "--out", str(tmp_path / "o"))
    assert res.exit_code == 3
    assert "(1+r)/2" in res.output


def test_config_errors_exit_2(tmp_path):
    assert invoke("run", write(tmp_path / "bad.json", "{not json")).exit_code == 2
    assert invoke("run", write(tmp_path / "extra.json", {**CASE_II, "colour": "blue"})).exit_code == 2
    assert invoke("run", str(tmp_path / "missing.json")).exit_code == 2
    rk4 = {**CASE_II, "integrator": {"method": "rk4"}}
    assert invoke("run", write(tmp_path / "rk4.json", rk4)).exit_code == 2


def test_integration_failure_exit_4(tmp_path):
    doc = {**CASE_II, "integrator": {"rel_tol": 1e-14, "abs_tol": 1e-16, "h_min": 0.05, "h_init": 0.05}}
    res = invoke("run", write(tmp_path / "c.json", doc), "--out", str(tmp_path / "o"))
    assert res.exit_code == 4 and "StepUnderflow" in res.output
    assert json.loads((tmp_path / "o" / "audit.json").read_text())["termination"].startswith("StepUnderflow")


def test_failed_audit_exit_1(tmp_path):
    # ε = (1+t)^{-1} keeps the budget infinite
    doc = {**CASE_II, "horizon": 20.0, "perturbation": {"family": "power", "c": 1.0, "q": 1.0}}
    res = invoke("run", write(tmp_path / "c.json", doc), "--out", str(tmp_path / "o"))
    assert res.exit_code == 1 and "perturbation_budget" in res.output


def test_check_reports(tmp_path):
    res = invoke("check", write(tmp_path / "ok.json", CASE_II))
    assert res.exit_code == 0
    rep = json.loads(res.output)
    assert rep["regime"]["case"] == "I" and rep["suggested_beta"] == 0.25
    bad_beta = {**CASE_II, "beta": 1 / 3}
    res = invoke("check", write(tmp_path / "b.json", bad_beta))
    assert res.exit_code == 3
    rep = json.loads(res.output)
    assert rep["suggested_beta"] == 0.25 and rep["growth"]["holds"] is False
    neg = {**CASE_II, "perturbation": {"family": "power", "c": 1.0, "q": 1.0}}
    res = invoke("check", write(tmp_path / "n.json", neg))
    assert res.exit_code == 1
    assert json.loads(res.output)["perturbation_budget"]["value"] == "inf"
    pos = {**CASE_II, "perturbation": {"family": "power", "c": 1.0, "q": 3.0}}
    assert invoke("check", write(tmp_path / "p.json", pos)).exit_code == 0


def test_check_log_schedule_needs_t0_e(tmp_path):
    doc = {"gamma": {"family": "log", "r": 1.0}, "delta": {"kind": "reciprocal", "beta0": 2 / 3}, "t0": 2.0}
    assert invoke("check", write(tmp_path / "c.json", doc)).exit_code == 3


def test_sweep_over_alpha(tmp_path):
    doc = {"base": {"gamma": {"family": "power", "alpha": 1.0}, "delta": {"kind": "reciprocal", "beta0": 2 / 3}},
           "grid": {"gamma.alpha": [1.0, 2.0, 3.0, 4.0, 6.0]}}
    res = invoke("sweep", write(tmp_path / "s.json", doc), "--out", str(tmp_path / "o"))
    assert res.exit_code == 0, res.output
    table = rows(tmp_path / "o" / "sweep.csv")
    assert len(table) == 5 and all(r["pass"] == "true" for r in table)
    assert all((tmp_path / "o" / f"cell_{i:04d}" / "rates.csv").exists() for i in range(5))


def test_sweep_over_r_in_parallel(tmp_path):
    doc = {"base": {"gamma": {"family": "power", "alpha": 12.0}, "delta": {"kind": "linear", "r0": 1.0}},
           "grid": {"gamma.r": [-0.5, 0.0, 0.5]}}
    cfg = write(tmp_path / "s.json", doc)
    res = invoke("sweep", cfg, "--out", str(tmp_path / "o"), "--jobs", "2")
    assert res.exit_code == 0, res.output
    assert len(rows(tmp_path / "o" / "sweep.csv")) == 3
    invoke("sweep", cfg, "--out", str(tmp_path / "serial"))
    assert (tmp_path / "o" / "sweep.csv").read_bytes() == (tmp_path / "serial" / "sweep.csv").read_bytes()


def test_empty_sweep_grid(tmp_path):
    doc = {"base": CASE_II, "grid": {}}
    assert invoke("sweep", write(tmp_path / "s.json", doc)).exit_code == 2
    doc = {"base": CASE_II, "grid": {"gamma.alpha": []}}
    assert invoke("sweep", write(tmp_path / "t.json", doc)).exit_code == 2
