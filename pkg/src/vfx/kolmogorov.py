"""Backward Kolmogorov equation on a truncated chaos basis.

The generator is ``L = L_theta + G`` with ``L_theta`` diagonal.  The drift is
split by the output eigenvalue into a high part ``G_high`` (where
``(2 pi)^(2 theta) L_theta(k) >= M(n)``) and the remaining low part.  The
controlled ansatz ``phi = (1 - L_theta)^-1 G_high phi + phi_sharp`` is solved
by Picard iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import ChaosVector, drift_operators
from .opnorm import Weight, largest_singular_value


@dataclass(frozen=True)
class CutoffSpec:
    L: float = 1.0
    theta: float = 1.5
    eps_bar: float | None = None

    def __post_init__(self):
        if self.theta <= 1:
            raise ValueError("theta must exceed 1")
        if self.L < 1:
            raise ValueError("L must be at least 1")
        eps = self.epsilon
        if not 0 < eps < (self.theta - 1) / (2 * self.theta):
            raise ValueError("eps_bar must lie in (0, (theta - 1) / (2 theta))")

    @property
    def epsilon(self):
        return (self.theta - 1) / (4 * self.theta) if self.eps_bar is None else self.eps_bar

    @property
    def exponent(self):
        t = self.theta
        return 3 * t / (t - 1 - 2 * t * self.epsilon)

    def threshold(self, n):
        """``M(n) = L (n + 1)^exponent``."""
        return self.L * (np.asarray(n, dtype=float) + 1.0) ** self.exponent

    def predicted_slope(self):
        """Exponent of ``L`` in the contraction bound."""
        t = self.theta
        return -(t - 1) / (2 * t) + self.epsilon


def high_mask(basis, cutoff):
    return basis.eigenvalue(cutoff.theta) >= cutoff.threshold(basis.order)


def split_matrices(basis, cutoff, m=None):
    """``(G_high, G_low)`` as sparse matrices; they sum to the full drift."""
    drift = drift_operators(basis, m).generator_drift
    mask = high_mask(basis, cutoff).astype(float)
    high = sp.diags(mask) @ drift
    low = sp.diags(1.0 - mask) @ drift
    return high.tocsr(), low.tocsr()


def split_drift(cutoff, direction, phi, m=None):
    """``G_high phi`` for direction ``"high"`` (or ``">"``), ``G_low phi`` for ``"low"`` (or ``"<"``)."""
    high, low = split_matrices(phi.basis, cutoff, m)
    if direction in ("high", ">", "≻"):
        mat = high
    elif direction in ("low", "<", "≺"):
        mat = low
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return ChaosVector(phi.basis, mat @ phi.coefficients)


def _resolvent(basis, theta, power):
    return (1.0 + basis.eigenvalue(theta)) ** power


def weighted_norm(phi, theta, w=None, number_power=0.0, resolvent_power=0.0):
    """``||w(N) (1 + N)^number_power (1 - L_theta)^resolvent_power phi||``."""
    b = phi.basis
    scale = (1.0 + b.order) ** number_power * _resolvent(b, theta, resolvent_power)
    if w is not None:
        scale = scale * w(b.order)
    return float(np.sqrt(np.sum(b.weight * np.abs(scale * phi.coefficients) ** 2)))


def contraction_factor(basis, cutoff, m=None, w=None, tol=1e-6, seed=0):
    """Norm of ``(1 - L_theta)^-1 G_high`` in the ``w(N) (1 - L_theta)^(1/2)`` norm."""
    high, _ = split_matrices(basis, cutoff, m)
    if high.nnz == 0:
        return 0.0
    w = w or Weight.one()
    # D K D^-1 with K = (1 - L_theta)^-1 G_high and D = sqrt(weight) w(N) (1 - L_theta)^(1/2)
    norm_root = np.sqrt(basis.weight) * w(basis.order)
    half = _resolvent(basis, cutoff.theta, -0.5)
    mat = sp.diags(norm_root * half) @ high @ sp.diags(half / norm_root)
    return largest_singular_value(mat, tol=tol, seed=seed).value


@dataclass(eq=False)
class ControlledPair:
    phi: ChaosVector
    phi_sharp: ChaosVector
    residual: float
    iterations: int
    contraction: float
    norm_ratio: float


def controlled_fixed_point(phi_sharp, cutoff, m=None, w=None, tol=1e-10, max_iter=200, start=None):
    """Solve ``phi = (1 - L_theta)^-1 G_high phi + phi_sharp`` by Picard iteration.

    ``norm_ratio`` is ``||w (1-L)^(1/2) phi|| / ||w (1-L)^(1/2) phi_sharp||``.
    """
    basis = phi_sharp.basis
    high, _ = split_matrices(basis, cutoff, m)
    inv = _resolvent(basis, cutoff.theta, -1.0)
    target = phi_sharp.coefficients
    psi = target.copy() if start is None else start.coefficients.copy()
    contraction = contraction_factor(basis, cutoff, m, w)
    if contraction >= 1:
        raise ArithmeticError(f"contraction factor {contraction:.3g} >= 1; increase L")
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = inv * (high @ psi) + target
        change = np.linalg.norm(new - psi)
        scale = max(np.linalg.norm(new), 1e-300)
        psi = new
        if change <= tol * scale:
            break
    phi = ChaosVector(basis, psi)
    resid = psi - inv * (high @ psi) - target
    sharp_norm = weighted_norm(phi_sharp, cutoff.theta, w, resolvent_power=0.5)
    ratio = weighted_norm(phi, cutoff.theta, w, resolvent_power=0.5) / sharp_norm if sharp_norm else 1.0
    return ControlledPair(
        phi,
        phi_sharp,
        float(np.sqrt(np.sum(basis.weight * np.abs(resid) ** 2))),
        iterations,
        contraction,
        ratio,
    )


def apply_limit_generator(pair, cutoff, m=None):
    """``L phi`` from ``(1 - L) phi = (1 - L_theta) phi_sharp - G_low phi``."""
    basis = pair.phi.basis
    _, low = split_matrices(basis, cutoff, m)
    sharp = _resolvent(basis, cutoff.theta, 1.0) * pair.phi_sharp.coefficients
    one_minus = sharp - low @ pair.phi.coefficients
    return ChaosVector(basis, pair.phi.coefficients - one_minus)


def alpha_exponent(gamma, theta):
    """Number-operator exponent in the well-posedness bound of the limit generator."""
    return (theta * (6 * gamma + 5) - 2) / (2 * (theta - 1))


def default_L(basis, theta, m=None, eps_bar=None, target=0.5, max_power=40):
    """Smallest power of two whose contraction factor is at most ``target``."""
    for k in range(max_power + 1):
        cut = CutoffSpec(2.0**k, theta, eps_bar)
        if contraction_factor(basis, cut, m) <= target:
            return cut.L
    raise ArithmeticError("no admissible L found")


@dataclass(eq=False)
class BackwardRun:
    times: np.ndarray
    norms: np.ndarray
    trajectory: list = field(default_factory=list)
    trajectory_times: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)

    def final(self):
        return self.trajectory[-1]

    def write_ledger(self, path):
        with open(path, "w") as fh:
            for rec in self.ledger:
                fh.write(json.dumps(rec) + "\n")


class _Monitor:
    """Streams the a priori quantities along a run and fits their constants."""

    def __init__(self, basis, theta, gen, phi0, number_power, alpha, gamma):
        self.basis, self.theta, self.gen = basis, theta, gen
        b = basis
        self.w = b.weight
        self.eig = b.eigenvalue(theta)
        self.res = 1.0 + self.eig
        self.np_p = (1.0 + b.order) ** number_power
        self.np_a = (1.0 + b.order) ** alpha
        self.gamma = gamma
        self.rows = []
        lphi0 = gen @ phi0
        self.a0 = self._n(self.np_a * lphi0)
        self.b0 = self._n(self.np_a * np.sqrt(self.res) * phi0) ** 2
        self.p0 = self._n(self.np_p * phi0) ** 2
        self.integral = 0.0
        self.prev_phi = None
        self.step_weight = None

    def _n(self, c):
        return float(np.sqrt(np.sum(self.w * np.abs(c) ** 2)))

    def record(self, t, phi, dt):
        if self.step_weight is None:
            rate = 2 * self.eig
            self.step_weight = np.where(rate > 0, -np.expm1(-rate * dt) / np.where(rate > 0, rate, 1.0), dt)
        lphi = self.gen @ phi
        inner = np.sum(self.w * np.conj(phi) * lphi)
        energy = self._n(self.np_p * np.sqrt(self.res) * phi) ** 2
        if self.prev_phi is not None:
            # the diagonal decay is integrated exactly over the step; drift effects enter at O(dt)
            self.integral += float(np.sum(self.w * (self.np_p**2 * self.res) * np.abs(self.prev_phi) ** 2 * self.step_weight))
        self.prev_phi = phi.copy()
        psi = phi + (lphi + self.eig * phi)  # (d/dt + 1 - L_theta) phi
        row = {
            "t": float(t),
            "norm": self._n(phi),
            "diss_value": float(2 * inner.real),
            "monitor_values": {
                "dissipation_identity": float(2 * inner.real + 2 * self._n(np.sqrt(self.eig) * phi) ** 2),
                "time_derivative": self._n(self.np_a * lphi),
                "half_resolvent_sq": self._n(self.np_a * np.sqrt(self.res) * phi) ** 2,
                "number_norm_sq": self._n(self.np_p * phi) ** 2,
                "number_half_resolvent_sq": energy,
                "schauder_solution": self._n(self.np_p * self.res ** (1 + self.gamma) * phi),
                "schauder_forcing": self._n(self.np_p * self.res**self.gamma * psi),
                "energy_integral": self.integral,
            },
        }
        self.rows.append(row)
        return row

    def fit(self):
        t = np.array([r["t"] for r in self.rows])
        mv = {k: np.array([r["monitor_values"][k] for r in self.rows]) for k in self.rows[0]["monitor_values"]}
        pos = t > 0
        deriv = mv["time_derivative"]
        c20 = 0.0
        if self.a0 > 0 and pos.any():
            c20 = float(max(0.0, np.max(np.log(np.maximum(deriv[pos], 1e-300) / self.a0) / t[pos])))
        denom = t * np.exp(t * c20) * self.a0**2 + self.b0
        c21 = float(np.max(mv["half_resolvent_sq"] / denom)) if np.all(denom > 0) else 0.0
        sol, forcing = mv["schauder_solution"], mv["schauder_forcing"]
        excess = np.max(sol) - sol[0]
        cs = float(max(0.0, excess) / np.max(forcing)) if np.max(forcing) > 0 else 0.0
        lhs = mv["number_norm_sq"] + mv["energy_integral"]
        c51 = float(np.max(lhs / (np.exp(c20 * t) * self.p0))) if self.p0 > 0 else 0.0
        return {
            "time_derivative_rate": c20,
            "half_resolvent_constant": c21,
            "schauder_constant": cs,
            "integral_estimate_constant": c51,
            "max_dissipation_identity_defect": float(np.max(np.abs(mv["dissipation_identity"]) / np.maximum(np.array([r["norm"] for r in self.rows]) ** 2, 1e-300))),
        }


def _phi_functions(z):
    """``phi_1(z) = (e^z - 1)/z`` and ``phi_2(z) = (e^z - 1 - z)/z^2``, series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z**2 / 24, (np.expm1(zs) - zs) / zs**2)
    return p1, p2


def backward_solve(
    phi0,
    theta,
    m=None,
    dt=1e-3,
    t_final=0.1,
    nonlinear=True,
    number_power=1.0,
    alpha=1.0,
    gamma=0.25,
    store_every=None,
    monitor=True,
):
    """Integrate ``d phi / dt = (L_theta + G) phi`` with a two-stage exponential Runge-Kutta step.

    Per step of size h, with ``z = h L_theta`` and the usual ``phi_1, phi_2`` functions:
    ``phi_mid = exp(z/2) phi + h/2 phi_1(z/2) G phi`` and
    ``phi_next = exp(z) phi + h [(phi_1(z) - 2 phi_2(z)) G phi + 2 phi_2(z) G phi_mid]``.
    The diagonal part is exact.  The weights satisfy the stiff order conditions,
    so the step stays second order when ``h L_theta`` is large; the Lawson
    midpoint rule drops to roughly first order in that regime.
    """
    basis = phi0.basis
    eig = basis.eigenvalue(theta)
    drift = drift_operators(basis, m).generator_drift if nonlinear else sp.csr_matrix((basis.size, basis.size))
    gen = drift - sp.diags(eig)
    n_steps = int(round(t_final / dt))
    full, half = np.exp(-dt * eig), np.exp(-0.5 * dt * eig)
    p1, p2 = _phi_functions(-dt * eig)
    p1_half, _ = _phi_functions(-0.5 * dt * eig)
    w_first, w_mid = dt * (p1 - 2 * p2), 2 * dt * p2
    phi = phi0.coefficients.copy()
    store_every = store_every or max(n_steps, 1)
    run = BackwardRun(np.arange(n_steps + 1) * dt, np.zeros(n_steps + 1))
    mon = _Monitor(basis, theta, gen, phi, number_power, alpha, gamma) if monitor else None
    weight = basis.weight

    def log(i):
        run.norms[i] = np.sqrt(np.sum(weight * np.abs(phi) ** 2))
        if mon is not None:
            run.ledger.append(mon.record(i * dt, phi, dt))
        if i % store_every == 0 or i == n_steps:
            run.trajectory.append(ChaosVector(basis, phi.copy()))
            run.trajectory_times.append(i * dt)

    log(0)
    for i in range(1, n_steps + 1):
        if nonlinear:
            g0 = drift @ phi
            mid = half * phi + 0.5 * dt * p1_half * g0
            phi = full * phi + w_first * g0 + w_mid * (drift @ mid)
        else:
            phi = full * phi
        log(i)
    if mon is not None:
        run.monitors = mon.fit()
    return run


def contraction_slack(run):
    """Largest relative one-step norm increase, zero for a monotone run."""
    n = run.norms
    rel = (n[1:] - n[:-1]) / np.maximum(n[:-1], 1e-300)
    return float(max(0.0, np.max(rel))) if len(rel) else 0.0


def dissipativity_rate(run):
    """Largest finite-difference ``(d/dt ||phi||^2) / ||phi||^2`` along the run."""
    n2 = run.norms**2
    dt = run.times[1] - run.times[0]
    return float(np.max((n2[1:] - n2[:-1]) / dt / np.maximum(n2[:-1], 1e-300)))


def limit_generator_bound(basis, cutoff, m, gamma, samples=20, seed=0, w=None):
    """Largest observed ``||w (1-L)^gamma G_low phi|| / ||w (1+N)^alpha (1-L)^(1/2) phi_sharp||``."""
    from .fock import random_vector

    alpha = alpha_exponent(gamma, cutoff.theta)
    _, low = split_matrices(basis, cutoff, m)
    worst = 0.0
    for s in range(samples):
        sharp = random_vector(basis, seed + s, orders=range(basis.n_max))
        pair = controlled_fixed_point(sharp, cutoff, m, w)
        lhs = weighted_norm(ChaosVector(basis, low @ pair.phi.coefficients), cutoff.theta, w, resolvent_power=gamma)
        rhs = weighted_norm(sharp, cutoff.theta, w, number_power=alpha, resolvent_power=0.5)
        worst = max(worst, lhs / rhs)
    return worst, alpha




def first_bite_L(basis, cutoff_theta, eps_bar=None):
    """Smallest power of two at which the order-1 cutoff exceeds the lowest order-1 eigenvalue.

    Below it every first-order key is "high" and the contraction factor does
    not depend on ``L``.
    """
    lowest = float(np.min(basis.eigenvalue(cutoff_theta)[basis.level_slice(1)]))
    scale = CutoffSpec(1.0, cutoff_theta, eps_bar).threshold(1)
    return float(2.0 ** max(0, int(np.ceil(np.log2(lowest / scale)))))


def contraction_scan(basis, theta, eps_bar=None, m=None, multiples=(1, 2, 4, 8), start=None, samples=5, seed=0, tolerance=0.15):
    """Contraction factor against ``L`` and the fitted log-log slope.

    ``L`` runs over ``start * multiples`` (``start`` defaults to
    :func:`first_bite_L`).  Also records
    ``||(1-L)^(1/2)(K phi_sharp - phi_sharp)|| L^(-predicted slope)`` for random
    ``phi_sharp``, which should stay bounded along the scan.
    """
    from .fock import random_vector

    start = first_bite_L(basis, theta, eps_bar) if start is None else float(start)
    Ls = [start * f for f in multiples]
    factors, iterations, scaled = [], [], []
    sharps = [random_vector(basis, seed + s, orders=range(basis.n_max)) for s in range(samples)]
    for L in Ls:
        cut = CutoffSpec(L, theta, eps_bar)
        factors.append(contraction_factor(basis, cut, m))
        worst, its = 0.0, 0
        for sharp in sharps:
            pair = controlled_fixed_point(sharp, cut, m)
            diff = ChaosVector(basis, pair.phi.coefficients - sharp.coefficients)
            rel = weighted_norm(diff, theta, resolvent_power=0.5) / weighted_norm(sharp, theta, resolvent_power=0.5)
            worst = max(worst, rel * L ** (-cut.predicted_slope()))
            its = max(its, pair.iterations)
        scaled.append(worst)
        iterations.append(its)
    predicted = CutoffSpec(1.0, theta, eps_bar).predicted_slope()
    slope = None
    if all(f > 0 for f in factors):
        slope = float(np.polyfit(np.log(Ls), np.log(factors), 1)[0])
    return {
        "theta": float(theta),
        "eps_bar": float(CutoffSpec(1.0, theta, eps_bar).epsilon),
        "L": Ls,
        "contraction": [float(f) for f in factors],
        "iterations": iterations,
        "scaled_correction": scaled,
        "slope": slope,
        "predicted_slope": float(predicted),
        "passed": bool(slope is not None and abs(slope - predicted) <= tolerance and max(iterations) <= 50),
    }


def backward_order_check(phi0, theta, m=None, dts=(2.5e-4, 1.25e-4), t_final=0.01, reference_refinement=8, min_ratio=3.5):
    """Norm-growth slack and global error under step halving.

    The slack of each run is :func:`contraction_slack` and must stay below
    ``10 dt^2``; the global error against a run with step
    ``min(dts) / reference_refinement`` must shrink by ``min_ratio`` per halving.
    """
    ref = backward_solve(phi0, theta, m, dt=min(dts) / reference_refinement, t_final=t_final, monitor=False).final()
    w = phi0.basis.weight
    ref_norm = np.sqrt(np.sum(w * np.abs(ref.coefficients) ** 2))
    rows = []
    for dt in dts:
        run = backward_solve(phi0, theta, m, dt=dt, t_final=t_final, monitor=False)
        err = np.sqrt(np.sum(w * np.abs(run.final().coefficients - ref.coefficients) ** 2)) / ref_norm
        rows.append({"dt": float(dt), "slack": contraction_slack(run), "slack_bound": 10 * dt**2, "relative_error": float(err)})
    error_ratios = [rows[i]["relative_error"] / rows[i + 1]["relative_error"] for i in range(len(rows) - 1)]
    slack_ratios = []
    for i in range(len(rows) - 1):
        a, b = rows[i]["slack"], rows[i + 1]["slack"]
        slack_ratios.append(np.inf if b == 0 else a / b)
    slack_ok = all(r["slack"] <= r["slack_bound"] for r in rows)
    return {
        "rows": rows,
        "error_ratios": [float(x) for x in error_ratios],
        "slack_ratios": [float(x) for x in slack_ratios],
        "passed": bool(slack_ok and all(x >= min_ratio for x in slack_ratios) and all(x >= min_ratio for x in error_ratios)),
    }
