import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from dpgauss import cli
from dpgauss.errors import ParseError

HUGE = ["--epsilon", "3e6", "--allow-large-epsilon", "--per-stage", "--set", "c2=30"]


def run(args, tmp_path, name="report.json"):
    out = tmp_path / name
    status = cli.main(args + ["--output", str(out)])
    return status, json.loads(out.read_text())


def test_ingest_examples(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n")
    assert np.array_equal(cli.ingest_csv(p), [[1, 2], [3, 4]])
    p.write_text("# x,y\n1,2\n")
    assert cli.ingest_csv(p).shape == (1, 2)
    p.write_text("1,2\n3\n")
    with pytest.raises(ParseError) as exc:
        cli.ingest_csv(p)
    assert exc.value.line == 2
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(ParseError):
        cli.ingest_csv(p)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_csv_round_trip(tmp_path_factory, X):
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    cli.emit_csv(X, p)
    assert np.array_equal(cli.ingest_csv(p), X)


def test_seed_required(tmp_path):
    status, rep = run(["subspace"], tmp_path)
    assert status == 1 and rep["error"]["code"] == "InvalidInput"


def test_large_epsilon_needs_flag(tmp_path):
    status, rep = run(["subspace", "--seed", "1", "--epsilon", "2"], tmp_path)
    assert status == 1 and "allow-large-epsilon" in rep["error"]["message"]


def test_subspace_rank2(tmp_path):
    status, rep = run(["subspace", "--seed", "3", "--eigenvalues", "1,2,0,0,0"], tmp_path)
    assert status == 0 and rep["outcome"] == "ok"
    assert rep["metrics"]["exact_recovery"] is True
    assert rep["budget_spent"]["epsilon"] == 2.0
    assert rep["schema"] == 1 and "c1" in rep["constants"]


def test_insufficient_data_reports_required_m(tmp_path):
    status, rep = run(["learn-gaussian", "--seed", "1", "--m", "1000"], tmp_path)
    assert status == 1 and rep["error"]["code"] == "InsufficientData"
    assert "m >= " in rep["error"]["message"]
    status, rep = run(["learn-gaussian", "--seed", "1"], tmp_path)
    assert status == 1 and rep["error"]["code"] == "InsufficientData"
    assert "requires m = " in rep["error"]["message"]


def test_determinism(tmp_path):
    args = ["learn-gaussian", "--seed", "7", "--eigenvalues", "1,4,0", "--mean", "1,2,3"] + HUGE
    s1, r1 = run(args, tmp_path, "a.json")
    s2, r2 = run(args, tmp_path, "b.json")
    assert s1 == s2 == 0
    r1.pop("wall_time"), r2.pop("wall_time")
    r1["parameters"].pop("output"), r2["parameters"].pop("output")
    assert cli.dump_report(r1) == cli.dump_report(r2)
    assert r1["metrics"]["tv_upper_bound"] <= 0.25


def test_fail_exit_status(tmp_path):
    args = ["mean", "--seed", "2", "--corruption-fraction", "1", "--adversary", "scatter"] + HUGE
    status, rep = run(args, tmp_path)
    assert status == 2 and rep["outcome"] == "fail"
    assert rep["result"]["diagnostics"]["failed_at_threshold"] is True


def test_csv_input(tmp_path):
    X = np.random.default_rng(0).standard_normal((140 * 2, 2)) @ np.diag([1.0, 0.0])
    path = tmp_path / "x.csv"
    cli.emit_csv(X, path)
    status, rep = run(["subspace", "--seed", "1", "--input", str(path)], tmp_path)
    assert status == 0
    assert np.allclose(rep["result"]["point"], np.diag([1.0, 0.0]))


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 5\neigenvalues = 1,1,0\nepsilon = 0.5\n")
    status, rep = run(["subspace", "--config", str(cfg), "--epsilon", "0.9"], tmp_path)
    assert status == 0
    assert rep["parameters"]["seed"] == 5 and rep["parameters"]["epsilon"] == 0.9
    cfg.write_text("bogus = 1\n")
    assert cli.main(["subspace", "--config", str(cfg)]) == 1


def test_audit_command(tmp_path):
    status, rep = run(["audit", "--seed", "1", "--dim", "2", "--trials", "20000"], tmp_path)
    assert status == 0
    assert rep["result"]["covariance-mask"]["passed"] and rep["result"]["gaussian-mask"]["passed"]


def test_bench_single_cell(tmp_path):
    out = tmp_path / "b.csv"
    status, rep = run(["bench", "--seed", "1", "--estimator", "subspace", "--dims", "3",
                       "--ms", "420", "--seeds", "2", "--csv", str(out)], tmp_path)
    assert status == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and float(rows[0]["fail_rate"]) == 0.0
    assert out.read_text().count("\n") == 2


def test_bench_scatter_fails(tmp_path):
    out = tmp_path / "b.csv"
    rows = cli.bench([(2, 140 * 2945, 3e6, 1e-3, 0.25)], 3, 1, out, estimator="mean",
                     adversary="scatter")
    assert rows[0]["fail_rate"] == 1.0


@pytest.mark.slow
def test_bench_error_decreases_in_m(tmp_path):
    from dpgauss.config import load_constants
    from dpgauss.estimators import PrivacyBudget, plan_precondition

    consts = load_constants().with_overrides({"c2": 30})
    base = plan_precondition(2, PrivacyBudget(3e6, 1e-3), 0.2, consts).m
    ms = [base * f for f in (1, 2, 4, 8, 16)]
    rows = cli.bench([(2, m, 3e6, 1e-3, 0.25) for m in ms], 3, 4, tmp_path / "b.csv", consts)
    errors = [r["median_error"] for r in rows]
    assert stats.spearmanr(ms, errors)[0] < 0
