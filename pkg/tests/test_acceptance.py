"""Acceptance criteria 1-12, read off a single default ``verify-all`` run.

Each test appends one ``CRITERION n: PASS|FAIL ...`` line, printed in the
terminal summary.  The run takes a few minutes on one core.
"""

import json
import time

import pytest

from vfx import cli


@pytest.fixture(scope="module")
def verify_all(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify-all")
    start = time.perf_counter()
    code = cli.main(["verify-all", "--out", str(out)])
    elapsed = time.perf_counter() - start

    def report(name):
        return json.loads((out / name / "report.json").read_text())

    return {"code": code, "seconds": elapsed, "summary": json.loads((out / "report.json").read_text()), "report": report}


def record(log, number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
    log.append(line)
    print(line)
    assert ok, line


def test_criterion_01_invariance(verify_all, acceptance_log):
    rep = verify_all["report"]("invariance")
    st = rep["statistics"]
    ok = rep["passed"] and st["paths"] >= 10_000 and rep["seconds"] <= 300
    record(acceptance_log, 1, ok, f"max |z| = {st['max_abs_z']:.2f} over {st['checks']} checks, {rep['seconds']:.0f} s")


def test_criterion_02_adjointness(verify_all, acceptance_log):
    rep = verify_all["report"]("adjointness")
    ok = rep["max_adjointness_defect"] <= 1e-10
    record(acceptance_log, 2, ok, f"defect {rep['max_adjointness_defect']:.1e} (lambda 1 and 2)")


def test_criterion_03_antisymmetry_and_dissipation(verify_all, acceptance_log):
    rep = verify_all["report"]("adjointness")
    anti, diss = rep["max_antisymmetry_defect"], rep["max_dissipation_identity_defect"]
    record(acceptance_log, 3, anti <= 1e-10 and diss <= 1e-10, f"antisymmetry {anti:.1e}, dissipation identity {diss:.1e}")


def test_criterion_04_uniform_drift_bounds(verify_all, acceptance_log):
    rep = verify_all["report"]("operator-check")
    growth = {k: [round(g, 4) for g in v] for k, v in rep["growth_beyond_reference"].items()}
    detail = f"growth beyond m=4 {growth}, drift/m ratio {rep['drift_over_m_ratio']:.2f}"
    record(acceptance_log, 4, rep["passed"], detail)


def test_criterion_05_controlled_fixed_point(verify_all, acceptance_log):
    rep = verify_all["report"]("fixed-point")
    slopes = ", ".join(f"theta={s['theta']}: {s['slope']:.3f} vs {s['predicted_slope']:.3f}" for s in rep["scans"])
    ok = rep["passed"] and rep["default"]["iterations"] <= 50 and len(rep["scans"]) == 2
    record(acceptance_log, 5, ok, f"{rep['default']['iterations']} iterations at default L; slopes {slopes}")


def test_criterion_06_backward_contraction(verify_all, acceptance_log):
    rep = verify_all["report"]("backward-solve")
    order = rep["order_check"]
    ok = rep["passed"] and all(r >= 3.5 for r in order["slack_ratios"] + order["error_ratios"])
    record(acceptance_log, 6, ok, f"slack {rep['slack']:.1e}, error ratio {order['error_ratios'][0]:.2f}, slack ratio {order['slack_ratios'][0]}")


def test_criterion_07_duality(verify_all, acceptance_log):
    rep = verify_all["report"]("duality")
    lin = max(r["relative_error"] for r in rep["linear"])
    nl = rep["nonlinear"]
    ok = rep["passed"] and lin <= 1e-8
    record(acceptance_log, 7, ok, f"linear {lin:.1e}; nonlinear |diff| {nl['difference']:.3g} <= {nl['allowance']:.3g}; drift z {rep['drift_effect']['z']:.2f}")


def test_criterion_08_hypercontractivity(verify_all, acceptance_log):
    rep = verify_all["report"]("hypercontractivity")
    ratio = rep["first_chaos_p4_ratio"]
    record(acceptance_log, 8, rep["passed"] and abs(3 * ratio - 1) <= 0.1, f"first-chaos p=4 ratio {ratio:.4f}")


def test_criterion_09_martingale(verify_all, acceptance_log):
    rep = verify_all["report"]("martingale")
    rows = [c for obs in rep["observables"] for c in obs["checkpoints"]]
    z = max(abs(c["z_score"]) for c in rows)
    qv = [c["qv_ratio"] for c in rows]
    ok = rep["passed"] and all(obs["paths"] >= 1000 for obs in rep["observables"])
    record(acceptance_log, 9, ok, f"max |z| {z:.2f}, QV ratios in [{min(qv):.3f}, {max(qv):.3f}]")


def test_criterion_10_convolution_scan(verify_all, acceptance_log):
    rep = verify_all["report"]("appendix-scan")
    st = rep["statistics"]
    ok = rep["passed"] and st["ratio_spread"] < 10 and st["max_tail_doubling_change"] < 1e-6
    record(acceptance_log, 10, ok, f"spread {st['ratio_spread']:.2f}, tail doubling {st['max_tail_doubling_change']:.1e}")


def test_criterion_11_lambda_gap(verify_all, acceptance_log):
    rep = verify_all["report"]("lambda-gap")
    ok = rep["passed"] and all(r >= 1.5 for r in rep["ratios"])
    record(acceptance_log, 11, ok, f"gap ratios {[round(r, 1) for r in rep['ratios']]}")


def test_criterion_12_verify_all(verify_all, acceptance_log):
    ok = verify_all["code"] == 0 and verify_all["seconds"] <= 600
    failed = verify_all["summary"]["failed_checks"]
    record(acceptance_log, 12, ok, f"exit {verify_all['code']} in {verify_all['seconds']:.0f} s, failed checks {failed}")
