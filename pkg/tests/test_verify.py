import itertools

import numpy as np
import pytest

from vfx import verify
from vfx.verify import ConvolutionScanSpec


def brute_sum(spec, k, lam, c, radius):
    total = 0.0
    r = int(radius * lam)
    for jx, jy in itertools.product(range(-r, r + 1), repeat=2):
        p = np.array([jx, jy]) / lam
        if p @ p > radius**2:
            continue
        top = 1.0 if spec.beta == 0 else np.hypot(*p) ** spec.beta
        kp = np.array(k) - p
        total += top / (np.hypot(*p) ** (2 * spec.theta) + np.hypot(*kp) ** (2 * spec.theta) + c) ** spec.alpha
    return total / lam**2


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_lattice_sum_against_double_loop(beta):
    spec = ConvolutionScanSpec(theta=2.0, alpha=2.0, beta=beta)
    for k, lam, c in [((0.0, 0.0), 1.0, 1.0), ((1.5, -0.5), 2.0, 10.0)]:
        assert verify.lattice_sum(spec, k, lam, c, 5.0) == pytest.approx(brute_sum(spec, k, lam, c, 5.0), rel=1e-12)


def test_tail_bound_dominates_the_measured_tail():
    spec = ConvolutionScanSpec()
    k, lam, c = (1.0, 1.0), 2.0, 1.0
    inner = verify.lattice_sum(spec, k, lam, c, 4.0)
    outer = verify.lattice_sum(spec, k, lam, c, 64.0)
    assert 0 < outer - inner <= spec.tail_bound(4.0, lam)


def test_choose_radius_meets_the_tolerance():
    spec = ConvolutionScanSpec()
    radius, total = verify.choose_radius(spec, (3.0, 4.0), 4.0, 1.0)
    assert spec.tail_bound(radius, 4.0) < verify.TAIL_TOLERANCE * total


def test_spec_rejects_divergent_exponents():
    with pytest.raises(ValueError):
        ConvolutionScanSpec(theta=1.0, alpha=1.0)
    with pytest.raises(ValueError):
        ConvolutionScanSpec(dimension=3)
    with pytest.raises(ValueError):
        ConvolutionScanSpec(constants=(-1.0,))


def test_small_scan_writes_csv(tmp_path):
    spec = ConvolutionScanSpec(lambdas=(1.0, 2.0), constants=(1.0,), wavevectors=((0.0, 0.0), (2.0, 0.0)))
    path = tmp_path / "scan.csv"
    rep = verify.convolution_bound_scan(spec, csv_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lambda,kx,ky,C,sum,bound,ratio"
    assert len(lines) == 1 + rep["statistics"]["cells"] == 5


def test_report_statuses():
    ok = {"a": ("first", {"passed": True}), "b": ("second", {"pass": True})}
    assert verify.verify_report(ok)["status"] == "pass"
    partial = verify.verify_report(ok, expected=["a", "b", "c"])
    assert partial["status"] == "partial" and partial["skipped_checks"] == ["c"]
    failed = verify.verify_report({**ok, "c": ("third", {"passed": False})})
    assert failed["status"] == "fail" and failed["failed_checks"] == ["c"]
    assert [row["check"] for row in failed["ledger"]] == ["a", "b", "c"]
