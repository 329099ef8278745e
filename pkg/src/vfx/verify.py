"""Brute-force lattice convolution estimates and the consolidated pass/fail report."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TAIL_TOLERANCE = 1e-6
ROW_CHUNK = 256


@dataclass(frozen=True)
class ConvolutionScanSpec:
    """Grid for ``lam^-2 sum_p |p|^beta / (|p|^(2 theta) + |k - p|^(2 theta) + C)^alpha``.

    The bound side is ``(|k|^(2 theta) + C)^((beta + d) / (2 theta) - alpha)``.
    """

    theta: float = 2.0
    alpha: float = 2.0
    beta: float = 0.0
    dimension: int = 2
    lambdas: tuple = (1.0, 2.0, 4.0, 8.0)
    constants: tuple = (1.0, 1e2, 1e4)
    wavevectors: tuple = ((0.0, 0.0), (0.5, 0.0), (1.0, 1.0), (2.0, 0.0), (3.0, 4.0), (8.0, 0.0), (16.0, 16.0))
    radius: float | None = None

    def __post_init__(self):
        if self.dimension != 2:
            raise ValueError("only the planar lattice is implemented")
        if self.alpha <= (self.dimension + self.beta) / (2 * self.theta):
            raise ValueError("alpha must exceed (d + beta) / (2 theta) for the sum to converge")
        if min(self.constants) < 0:
            raise ValueError("C must be non-negative")

    @property
    def decay(self):
        """Exponent of the integrand envelope ``|p|^(beta - 2 theta alpha)``."""
        return self.beta - 2 * self.theta * self.alpha

    def tail_bound(self, radius, lam):
        """Upper bound of the lattice sum outside ``|p| > radius``.

        Each lattice cell of area ``lam^-2`` lies within ``sqrt(2)/lam`` of its
        point, so the sum is dominated by the envelope integrated beyond
        ``radius - sqrt(2)/lam``.
        """
        inner = radius - np.sqrt(2) / lam
        if inner <= 0:
            return np.inf
        power = self.decay + self.dimension
        return 2 * np.pi * inner**power / -power

    def bound(self, k, c):
        kn = np.hypot(*k)
        return (kn ** (2 * self.theta) + c) ** ((self.beta + self.dimension) / (2 * self.theta) - self.alpha)


def lattice_sum(spec, k, lam, c, radius):
    """``lam^-2 sum`` over ``p`` in ``lam^-1 Z^2`` with ``|p| <= radius``; ``0^0 = 1`` at ``p = 0``."""
    jmax = int(np.floor(radius * lam))
    js = np.arange(-jmax, jmax + 1)
    total = 0.0
    for start in range(0, len(js), ROW_CHUNK):
        px = js[start : start + ROW_CHUNK, None] / lam
        py = js[None, :] / lam
        r2 = px**2 + py**2
        inside = r2 <= radius**2
        kp2 = (k[0] - px) ** 2 + (k[1] - py) ** 2
        if spec.beta == 0:
            top = 1.0
        else:
            top = np.where(r2 > 0, r2 ** (spec.beta / 2), 0.0)
        terms = top / (r2**spec.theta + kp2**spec.theta + c) ** spec.alpha
        total += float(np.sum(np.where(inside, terms, 0.0)))
    return total / lam**2


def choose_radius(spec, k, lam, c):
    """Smallest doubling of a start radius whose tail bound is below the tolerance."""
    radius = spec.radius or max(4.0, 2 * np.hypot(*k))
    estimate = lattice_sum(spec, k, lam, c, radius)
    for _ in range(40):
        if spec.tail_bound(radius, lam) < TAIL_TOLERANCE * estimate:
            return radius, estimate
        radius *= 2
        estimate = lattice_sum(spec, k, lam, c, radius)
    raise ArithmeticError(f"tail dominates the sum at k={k}, lambda={lam}, C={c}; raise the radius")


def convolution_bound_scan(spec=ConvolutionScanSpec(), csv_path=None):
    """Evaluate every ``(lambda, k, C)`` cell and the uniformity of the ratios."""
    rows = []
    worst_doubling = 0.0
    for lam in spec.lambdas:
        for k in spec.wavevectors:
            for c in spec.constants:
                radius, total = choose_radius(spec, k, lam, c)
                doubled = lattice_sum(spec, k, lam, c, 2 * radius)
                change = abs(doubled - total) / total
                worst_doubling = max(worst_doubling, change)
                b = spec.bound(k, c)
                rows.append(tuple(float(x) for x in (lam, k[0], k[1], c, total, b, total / b, radius, change)))
    ratios = np.array([r[6] for r in rows])
    spread = float(ratios.max() / ratios.min())
    # variation across lambda at fixed (k, C)
    by_cell = {}
    for r in rows:
        by_cell.setdefault((r[1], r[2], r[3]), []).append(r[6])
    lam_variation = max(max(v) / min(v) - 1 for v in by_cell.values())
    # the coarsest lattice resolves peaks of width ~1 poorly; the estimate targets large lambda
    refined = [v[1:] for v in by_cell.values() if len(v) > 2]
    refined_variation = max((max(v) / min(v) - 1 for v in refined), default=0.0)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["lambda", "kx", "ky", "C", "sum", "bound", "ratio"])
            for r in rows:
                out.writerow([repr(x) for x in r[:7]])
    return {
        "test": "appendix-scan",
        "passed": bool(np.all(np.isfinite(ratios)) and spread < 10 and worst_doubling < TAIL_TOLERANCE),
        "statistics": {
            "cells": len(rows),
            "ratio_min": float(ratios.min()),
            "ratio_max": float(ratios.max()),
            "ratio_spread": spread,
            "max_lambda_variation": float(lam_variation),
            "max_lambda_variation_refined": float(refined_variation),
            "max_tail_doubling_change": float(worst_doubling),
        },
        "rows": rows,
    }


@dataclass
class CheckOutcome:
    name: str
    estimate: str
    status: str
    details: dict = field(default_factory=dict)


def verify_report(reports, expected=None):
    """Consolidate module reports into one ledger.

    ``reports`` maps check names to ``(estimate description, report)`` with
    ``report`` a dict carrying ``passed`` (or ``pass``), or None when the check
    did not run.  Names in ``expected`` without a report count as skipped.
    """
    names = list(dict.fromkeys(list(expected or []) + list(reports)))
    outcomes = []
    for name in names:
        entry = reports.get(name)
        if entry is None or entry[1] is None:
            desc = entry[0] if entry else ""
            outcomes.append(CheckOutcome(name, desc, "skipped"))
            continue
        desc, rep = entry
        ok = rep.get("passed", rep.get("pass"))
        outcomes.append(CheckOutcome(name, desc, "pass" if ok else "fail", rep))
    failed = [o.name for o in outcomes if o.status == "fail"]
    skipped = [o.name for o in outcomes if o.status == "skipped"]
    status = "fail" if failed else ("partial" if skipped else "pass")
    return {
        "status": status,
        "checks": len(outcomes),
        "failed": len(failed),
        "failed_checks": failed,
        "skipped_checks": skipped,
        "ledger": [{"check": o.name, "estimate": o.estimate, "status": o.status} for o in outcomes],
    }
