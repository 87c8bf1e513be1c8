"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runs the experiment drivers at desk scale (30 seeds; 10 at 32 x 32).
"""
import time

import pytest

from rasc import harness as H
from rasc.cli import main

pytestmark = pytest.mark.acceptance


def _report(capsys, n, title, verdicts, extra=""):
    ok = all(v.passed for v in verdicts)
    with capsys.disabled():
        print("\nCRITERION %2d %s  %s%s" % (n, "PASS" if ok else "FAIL", title, extra))
        for v in verdicts:
            print("    %s %-32s %s  target %s" % ("ok  " if v.passed else "FAIL", v.name, H._cell(v.value), v.target))
    return ok


def _cfg(**flat):
    return H.ExperimentConfig.from_flat(flat)


@pytest.fixture(scope="module")
def sim16():
    t0 = time.perf_counter()
    res = H.run_simulate(_cfg(**{"simulate.grids": [16]}))
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sim_8_32():
    return H.run_simulate(_cfg(**{"simulate.grids": [8, 32]}))


def test_criterion_01_table1(capsys, sim16):
    res, secs = sim16
    names = ["uncalibrated_rmse_16", "factory_rmse_16", "ekf_rmse_16", "rasc_rmse_16", "clusters_16"]
    vs = [res.verdict(n) for n in names]
    vs.append(H.Verdict("runtime_seconds", secs < 180, secs, "< 180"))
    assert _report(capsys, 1, "Table 1 reproduction (16x16, 30 seeds)", vs)


def test_criterion_02_bytes(capsys, sim16, sim_8_32):
    vs = [sim_8_32.verdict("bytes_centralized_8"), sim16[0].verdict("bytes_centralized_16"),
          sim_8_32.verdict("bytes_centralized_32"), sim16[0].verdict("bytes_ratio_16")]
    assert _report(capsys, 2, "Table 1 bytes", vs)


def test_criterion_03_table2(capsys):
    res = H.run_baselines(_cfg())
    assert _report(capsys, 3, "Table 2 bands, ordering, RASC vs BMEP", res.verdicts)


@pytest.fixture(scope="module")
def theory():
    return H.run_theory(_cfg())


def test_criterion_04_theorem1(capsys, theory):
    vs = [v for v in theory.verdicts if v.name.startswith("t1_outer_monotone")]
    info = [v for v in theory.verdicts if v.name.startswith("t1_irls_descent")]
    ok = _report(capsys, 4, "per-cluster objective non-increasing across outer iterations", vs)
    with capsys.disabled():
        for v in info:
            print("    info %-32s %s (descent of every reweighting step)" % (v.name, H._cell(v.value)))
    assert ok


def test_criterion_05_theorem2(capsys, theory):
    vs = [v for v in theory.verdicts if v.name.startswith("t2_")]
    assert _report(capsys, 5, "consensus RMSE monotone and rho_emp <= rho_th + 0.02", vs)


def test_criterion_06_theorem3(capsys, theory):
    vs = [v for v in theory.verdicts if v.name.startswith("t3_")]
    sizes = sorted(int(v.name.rsplit("_", 1)[1]) for v in vs)
    assert sizes == [5, 10, 13, 20]
    # trial counts of the floor(gamma k) rows: every position set for k <= 10, sampled above
    trials = {(r["k"], r["replaced"]): r["trials"] for r in theory.tables["breakdown"]}
    for k, g, want in ((5, 1, 5), (10, 2, 45), (13, 2, 1000), (20, 4, 1000)):
        vs.append(H.Verdict("trials_k%d" % k, trials[(k, g)] == want, float(trials[(k, g)]), "== %d" % want))
    assert _report(capsys, 6, "trimmed-mean breakdown at floor(gamma k) + 1", vs)


def test_criterion_07_faults(capsys):
    res = H.run_faults(_cfg(**{"faults.failure_rates": [0.0, 0.3], "faults.loss_rates": [0.0, 0.3]}))
    vs = [res.verdict("fault_degradation"), res.verdict("fault_vs_uncalibrated")]
    assert _report(capsys, 7, "fault robustness at 30% failure / 30% loss", vs)


def test_criterion_08_sensitivity(capsys):
    eta = H.run_sweep(_cfg(**{"sweep.parameter": "eta"}))
    nmin = H.run_sweep(_cfg(**{"sweep.parameter": "nmin"}))
    vs = [eta.verdict("eta_spread"), nmin.verdict("nmin_within_default")]
    assert _report(capsys, 8, "sensitivity to eta and N_min", vs)


def test_criterion_09_stress(capsys):
    res = H.run_stress(_cfg())
    vs = [res.verdict("rmse_reduction"), res.verdict("p2p_reduction"), res.verdict("gauge_ratio")]
    assert _report(capsys, 9, "stress test on synthetic stand-in recording", vs)


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(capsys, tmp_path):
    small = ["--runs", "2", "--seed-base", "5"]
    rec_dir = tmp_path / "rec"
    assert main(["standin", "--out", str(rec_dir), "--drift", "--set", "standin.frames=40"]) == 0
    rec = str(rec_dir / "standin_drift.csv")
    commands = [
        ["simulate", *small, "--set", "simulate.grids=[8]"],
        ["baselines", *small],
        ["sweep", *small, "--parameter", "alpha"],
        ["faults", *small, "--failure-rates", "0,0.3", "--loss-rates", "0.3", "--set", "faults.runs=2"],
        ["theory", *small, "--set", "theory.grids=[8]", "--set", "theory.breakdown_trials=50"],
        ["stress", "--set", "stress.folds=2", "--set", "stress.frames=40", "--set", "standin.frames=40"],
        ["calibrate", rec, "--set", "calibrate.folds=2"],
        ["standin", "--set", "standin.frames=20"],
    ]
    vs = []
    for cmd in commands:
        a, b = tmp_path / (cmd[0] + "_a"), tmp_path / (cmd[0] + "_b")
        ca = main(cmd + ["--out", str(a)])
        cb = main(cmd + ["--out", str(b)])
        ta, tb = _tree(a), _tree(b)
        same = ca == cb and ca in (0, 3) and len(ta) > 0 and ta == tb
        vs.append(H.Verdict("rerun_identical_" + cmd[0], same, float(len(ta)), "byte-identical CSVs"))
    capsys.readouterr()
    assert _report(capsys, 10, "byte-identical reruns of every subcommand", vs)
