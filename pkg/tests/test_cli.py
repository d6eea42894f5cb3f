import csv
import json

import numpy as np
import pytest
from scipy.special import softmax

import clpbounds.cli as cli
from clpbounds.dataio import bundled_path, read_table, write_table
from clpbounds.estimators import BoundsReport, estimate_bounds_bfs
from clpbounds.problems import NotOptimallyTreated, NuisanceModel, ProblemSpec

from conftest import iv_population


def run(*args):
    return cli.main([str(a) for a in args] + ["--threads", "1"])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_bundled_estimate(tmp_path):
    out = tmp_path / "est"
    assert run("estimate", "--input", "@joint_po_200", "--output", out) == 0
    rep = json.loads((tmp_path / "est.json").read_text())["report"]
    assert rep["theta_L"] <= rep["theta_U"]
    assert rep["ci"][0] <= rep["theta_L"] and rep["theta_U"] <= rep["ci"][1]
    row = _rows(tmp_path / "est.csv")[0]
    assert float(row["theta_L"]) == rep["theta_L"]


def test_estimate_json_round_trip_is_bit_exact(tmp_path):
    out = tmp_path / "est"
    assert run("estimate", "--input", "@joint_po_200", "--output", out) == 0
    payload = json.loads((tmp_path / "est.json").read_text())
    back = BoundsReport.from_dict(payload["report"])
    assert back.to_dict() == payload["report"]
    data, nm, _ = read_table(bundled_path("joint_po_200"), "joint-po", 3)
    direct = estimate_bounds_bfs(ProblemSpec.joint_po(2, 3, NotOptimallyTreated()), data, nm)
    for name in ("theta_L", "theta_U", "V_L", "V_U"):
        assert getattr(back, name) == getattr(direct, name)
    assert back.ci == direct.ci


def test_entropic_records_resolved_eta(tmp_path):
    out = tmp_path / "ent"
    assert run("estimate", "--input", "@joint_po_200", "--output", out,
               "--engine", "entropic", "--eta-schedule", "log", "--kappa", 2) == 0
    rep = json.loads((tmp_path / "ent.json").read_text())["report"]
    assert rep["hyper"] == pytest.approx(2 * np.log(200))


def test_identical_invocations_give_identical_files(tmp_path):
    for tag in ("a", "b"):
        assert run("estimate", "--input", "@joint_po_200", "--output", tmp_path / tag,
                   "--nuisance", "multinomial-logit", "--seed", 3) == 0
    for ext in (".json", ".csv"):
        a = (tmp_path / f"a{ext}").read_text()
        b = (tmp_path / f"b{ext}").read_text()
        assert a.replace(str(tmp_path / "a"), "") == b.replace(str(tmp_path / "b"), "")


def _corrupt_bundled(tmp_path, row, column="m_0_1", delta=0.2):
    rows = _rows(bundled_path("joint_po_200"))
    rows[row][column] = repr(float(rows[row][column]) + delta)
    path = tmp_path / "bad.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def test_malformed_probabilities_exit_2_with_row(tmp_path, capsys):
    path = _corrupt_bundled(tmp_path, 17)
    assert run("estimate", "--input", path, "--output", tmp_path / "o") == 2
    assert "row 17" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--levels", 4], ["--alpha", 0.7], ["--folds", 1],
                                   ["--engine", "lse"], ["--setting", "iv"]])
def test_validation_failures_never_reach_the_solver(tmp_path, monkeypatch, extra):
    def boom(*a, **k):
        raise AssertionError("solver reached")

    for mod in ("clpbounds.estimators", "clpbounds.cli"):
        for name in ("solve_simplex_batch", "solve_entropic_batch", "bfs_contributions"):
            monkeypatch.setattr(f"{mod}.{name}", boom, raising=False)
    path = _corrupt_bundled(tmp_path, 3) if extra[0] == "--alpha" else "@joint_po_200"
    assert run("estimate", "--input", path, "--output", tmp_path / "o", *extra) == 2
    assert not (tmp_path / "o.json").exists()


def test_missing_input_is_io_error(tmp_path):
    assert run("estimate", "--input", tmp_path / "nope.csv", "--output", tmp_path / "o") == 4


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--n", 200, "--reps", 3, "--oracle-draws", 20000, "--seed", 5]
    assert run(*args, "--output", tmp_path / "s1") == 0
    assert run(*args, "--output", tmp_path / "s2") == 0
    for ext in (".json", ".csv"):
        assert (tmp_path / f"s1{ext}").read_bytes() == (tmp_path / f"s2{ext}").read_bytes()
    for row in _rows(tmp_path / "s1.csv"):
        bias, sd, rmse = (float(row[k]) for k in ("bias", "sd", "rmse"))
        assert rmse**2 == pytest.approx(bias**2 + sd**2, rel=1e-12)


def test_simulate_zero_reps(tmp_path):
    assert run("simulate", "--reps", 0, "--output", tmp_path / "s") == 2


def test_policy_harmful_and_lambda_sweep(tmp_path):
    out = tmp_path / "pol"
    assert run("policy", "--input", "@harmful_effect", "--levels", 4,
               "--utility", "reverse_shifted", "--lambda", 1, 0.5, 0, -1,
               "--restarts", 2, "--audit-points", 2, "--output", out) == 0
    for tag in ("1", "0.5", "0", "-1"):
        assert (tmp_path / f"pol_lam{tag}.json").exists()
        assert (tmp_path / f"pol_lam{tag}.csv").exists()
    fit = json.loads((tmp_path / "pol_lam1.json").read_text())
    assert fit["pi_max"] <= 0.05
    assert max(float(r["pi"]) for r in _rows(tmp_path / "pol_lam1.csv")) <= 0.05


def test_policy_zero_utility_at_lambda_zero(tmp_path, capsys):
    assert run("policy", "--input", "@harmful_effect", "--levels", 4, "--utility", "reverse",
               "--lambda", 0, "--output", tmp_path / "p") == 2
    assert "lambda" in capsys.readouterr().err


def test_diagnose_true_nuisances(tmp_path):
    out = tmp_path / "d"
    assert run("diagnose", "--input", "@joint_po_200", "--output", out) == 0
    summary = json.loads((tmp_path / "d.json").read_text())["summary"]
    assert summary["n_infeasible"] == 0


def test_diagnose_ate_point_identified(tmp_path):
    out = tmp_path / "d"
    assert run("diagnose", "--input", "@joint_po_200", "--objective", "ate",
               "--output", out) == 0
    rows = _rows(tmp_path / "d.csv")
    assert all(r["point_identified"] == "1" for r in rows)
    assert all(float(r["gap_L"]) == 0.0 for r in rows)


def test_diagnose_reports_infeasible_rows_from_heavy_noise(tmp_path):
    # softmax-perturbed margins are always feasible in the joint-PO system, so
    # use the full instrument system, whose inequalities the same noise law
    # (n = 200, r = 0.05) breaks
    n, L = 200, 2
    rng = np.random.default_rng(0)
    data, truth = iv_population(n, L, rng)
    s = 2.25 * n ** -0.05
    jz = truth.joint_given_instrument.reshape(n, 2, 2 * L)
    noisy = softmax(np.log(jz) + rng.normal(s, s, size=jz.shape), axis=2)
    nm = NuisanceModel(truth.propensity, joint_given_instrument=noisy.reshape(n, 2, 2, L))
    path = tmp_path / "iv.csv"
    write_table(path, data, nm)
    out = tmp_path / "d"
    assert run("diagnose", "--input", path, "--setting", "iv", "--levels", L,
               "--objective", "compliers", "--full-margins", "--output", out) == 0
    summary = json.loads((tmp_path / "d.json").read_text())["summary"]
    assert summary["fraction_infeasible"] > 0


def test_simulated_truth_nuisance_matches_csv_plugin(tmp_path):
    assert run("estimate", "--input", "@joint_po_200", "--nuisance", "simulated-truth",
               "--output", tmp_path / "a") == 0
    assert run("estimate", "--input", "@joint_po_200", "--output", tmp_path / "b") == 0
    a = json.loads((tmp_path / "a.json").read_text())["report"]
    b = json.loads((tmp_path / "b.json").read_text())["report"]
    assert a["theta_L"] == pytest.approx(b["theta_L"], abs=1e-12)


def test_engine_spec_parsing():
    assert cli.parse_engine("bfs").engine == "bfs"
    cell = cli.parse_engine("entropic:log:2")
    assert (cell.schedule, cell.value) == ("log", 2.0)
    with pytest.raises(Exception):
        cli.parse_engine("entropic:log")
