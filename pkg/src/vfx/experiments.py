"""Runners behind the command-line subcommands.

Each runner takes the resolved parameter table of its subcommand, a seed and
a worker count, and returns an :class:`Outcome` holding the JSON report and
CSV tables.  Runners never print and never touch the file system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import continuum, duality, fock, kolmogorov, opnorm, sde, torus, verify, wick
from .cylinder import CylinderFunction


@dataclass
class Outcome:
    report: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    files: dict = field(default_factory=dict)  # name -> bytes

    @property
    def passed(self):
        return bool(self.report.get("passed", True))


def _mode_field(lat, mode):
    return torus.indicator_field(lat, [tuple(int(x) for x in mode)])


def sample_measure(p, seed, workers):
    lat = torus.enumerate_lattice(p["m"], p["lam"])
    fields = torus.sample_energy_measure(lat, seed, size=p["samples"])
    sq = np.abs(fields.coefficients) ** 2
    est, se = sq.mean(axis=0), sq.std(axis=0, ddof=1) / np.sqrt(p["samples"])
    target = torus.mode_variance(lat)
    z = (est - target) / se
    rows = [(int(j[0]), int(j[1]), float(e), float(t), float(s)) for j, e, t, s in zip(lat.canonical_integer_modes, est, target, z)]
    import io

    buf = io.BytesIO()
    first = torus.SpectralField(lat, fields.coefficients[0])
    _write_snapshot_bytes(buf, first)
    passed = bool(np.max(np.abs(z)) <= p["threshold"])
    report = {"test": "sample-measure", "passed": passed, "max_abs_z": float(np.max(np.abs(z))), "modes": lat.n_canonical}
    return Outcome(report, {"mode_variance": (["kx", "ky", "empirical_var", "target_var", "z_score"], rows)}, {"sample0.vfld": buf.getvalue()})


def _write_snapshot_bytes(buf, field_):
    import os
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "s.vfld")
        torus.write_snapshot(path, field_)
        with open(path, "rb") as fh:
            buf.write(fh.read())


def _sde_config(p, seed, **over):
    keys = ("theta", "m", "lam", "dt", "t_final", "n_paths", "snapshot_stride", "nonlinear", "noise")
    args = {k: p[k] for k in keys if k in p}
    args.update(over)
    return sde.SdeConfig(seed=seed, **args)


class _ModeObserver:
    def __init__(self, indices):
        self.indices = indices

    def __call__(self, w):
        return w.coefficients[..., self.indices]


def simulate(p, seed, workers):
    cfg = _sde_config(p, seed)
    lat = cfg.lattice()
    idx = [int(lat.index_of(np.array(j))) - lat.n_canonical for j in p["modes"]]
    if any(i < 0 for i in idx):
        raise ValueError("simulate.modes must be canonical lattice modes")
    diag = sde.simulate(cfg, "sample-mu", observers={"modes": _ModeObserver(idx)}, workers=workers)
    data = diag.observables["modes"]
    rows = []
    for path in range(data.shape[0]):
        for ti, t in enumerate(diag.times):
            for mi, j in enumerate(p["modes"]):
                c = data[path, ti, mi]
                rows.append((path, repr(float(t)), int(j[0]), int(j[1]), repr(float(c.real)), repr(float(c.imag))))
    report = {"test": "simulate", "passed": diag.blowups == 0, "paths": cfg.n_paths, "steps": cfg.n_steps, "blowups": diag.blowups}
    return Outcome(report, {"paths": (["path", "time", "kx", "ky", "re", "im"], rows)})


def invariance(p, seed, workers):
    cfg = _sde_config(p, seed)
    lat = cfg.lattice()
    pairs = [(_mode_field(lat, a), _mode_field(lat, b)) for a, b in p["pairs"]]
    rep = sde.invariance_test(cfg, pairs, workers, p["threshold"], p["times"])
    tables = {
        "variances": (["time", "kx", "ky", "empirical_var", "target_var", "z_score"], rep.pop("rows")),
        "covariances": (["time", "empirical", "target", "z_score"], rep.pop("covariance_rows")),
    }
    rep["passed"] = rep.pop("pass")
    return Outcome(rep, tables)


def martingale(p, seed, workers):
    cfg = _sde_config(p, seed)
    lat = cfg.lattice()
    reports = []
    rows = []
    for mode in p["modes"]:
        f = _mode_field(lat, mode)
        phi = CylinderFunction.linear(f)
        diag = sde.simulate(cfg, "sample-mu", observers={"cylinder": sde.CylinderObserver(phi, cfg.theta, cfg.m)}, workers=workers)
        rep = sde.martingale_diagnostics(diag, threshold=p["threshold"])
        exact_rate = 2 * torus.laplacian_norm(f, (cfg.theta + 1) / 2) ** 2
        rep["statistics"]["mode"] = list(mode)
        rep["statistics"]["exact_qv_rate"] = float(exact_rate)
        reports.append(rep)
        for c in rep["statistics"]["checkpoints"]:
            rows.append((int(mode[0]), int(mode[1]), c["time"], c["mean_residual"], c["standard_error"], c["z_score"], c["qv_ratio"]))
    passed = all(r["pass"] for r in reports)
    report = {"test": "martingale", "passed": passed, "observables": [r["statistics"] for r in reports]}
    return Outcome(report, {"checkpoints": (["kx", "ky", "time", "mean_residual", "standard_error", "z_score", "qv_ratio"], rows)})


def ito_scaling(p, seed, workers):
    cfg = _sde_config(p, seed)
    lat = cfg.lattice()
    phi = CylinderFunction.linear(_mode_field(lat, p["mode"]))
    rep = sde.additive_functional_scaling(cfg, phi, p["horizons"], p["lags"], workers)
    st = rep["statistics"]
    lo, hi = p["slope_range"]
    rep["passed"] = bool(lo <= st["slope"] <= hi and st["modulus_slope"] >= lo)
    rows = [(h, s) for h, s in zip(st["horizons"], st["sup_square"])]
    return Outcome(rep, {"scaling": (["horizon", "sup_square"], rows)})


def operator_check(p, seed, workers):
    theta = p["theta"]
    w = opnorm.Weight("power", p["weight_power"])
    g_plus = 1 / (2 * theta) + p["gamma_plus_offset"]
    g_minus = p["gamma_minus"]
    top = (1 + 1 / theta) / 2
    rows, norms = [], {"raising": [], "lowering": [], "drift_over_m": []}
    for m in p["ms"]:
        basis = fock.enumerate_basis(torus.enumerate_lattice(m), p["n_max"])
        specs = {
            "raising": opnorm.OperatorSpec("gplus", theta, m, w, -g_plus, w, 1, 1.0, 1.0, top - g_plus, "raising"),
            "lowering": opnorm.OperatorSpec("gminus", theta, m, w, -g_minus, w, -1, 1.5, 0.0, top - g_minus, "lowering"),
            "drift": opnorm.OperatorSpec("drift", theta, m, w, 0.0, w, (1, -1), 1.0, 1.0, 0.5, "drift"),
        }
        for name, spec in specs.items():
            est = opnorm.operator_norm(spec, basis, seed=seed)
            rows.append((float(m), name, est.value, est.iterations))
            if name == "drift":
                norms["drift_over_m"].append(est.value / m)
            else:
                norms[name].append(est.value)
    ms = list(p["ms"])
    ref = ms.index(p["reference_m"])
    growth = {}
    for name in ("raising", "lowering"):
        vals = norms[name]
        growth[name] = [vals[i + 1] / vals[i] - 1 for i in range(ref, len(vals) - 1)]
    scaled = norms["drift_over_m"]
    scaled_ratio = max(scaled[ref:]) / scaled[ref]
    passed = all(g <= p["growth_tolerance"] for gs in growth.values() for g in gs) and scaled_ratio <= p["scaled_ratio_limit"]
    report = {
        "test": "operator-check",
        "passed": bool(passed),
        "gamma_plus": g_plus,
        "gamma_minus": g_minus,
        "norms": norms,
        "growth_beyond_reference": growth,
        "drift_over_m_ratio": float(scaled_ratio),
    }
    return Outcome(report, {"norms": (["m", "spec_id", "norm", "iterations"], rows)})


def adjointness(p, seed, workers):
    rows = []
    worst = 0.0
    for m, n_max, lam in p["cases"]:
        basis = fock.enumerate_basis(torus.enumerate_lattice(m, lam), int(n_max))
        d = fock.adjointness_defect(m, basis, p["trials"], seed)
        worst = max(worst, d)
        rows.append((float(m), int(n_max), float(lam), d))
    # antisymmetry of the drift and the dissipation identity on the first case
    m, n_max, lam = p["cases"][0]
    basis = fock.enumerate_basis(torus.enumerate_lattice(m, lam), int(n_max))
    drift = fock.drift_operators(basis, m).generator_drift
    eig = basis.eigenvalue(p["theta"])
    anti, ident = 0.0, 0.0
    for t in range(p["trials"]):
        phi = fock.random_vector(basis, seed * 7919 + t)
        c = phi.coefficients
        sq = float(np.sum(basis.weight * np.abs(c) ** 2))
        g = np.sum(basis.weight * np.conj(c) * (drift @ c))
        anti = max(anti, abs(g) / sq)
        lphi = np.sum(basis.weight * np.conj(c) * (drift @ c - eig * c))
        diss = float(np.sum(basis.weight * eig * np.abs(c) ** 2))
        ident = max(ident, abs(lphi.real + diss) / diss)
    tol = p["tolerance"]
    report = {
        "test": "adjointness",
        "passed": bool(worst <= tol and anti <= tol and ident <= tol),
        "max_adjointness_defect": worst,
        "max_antisymmetry_defect": anti,
        "max_dissipation_identity_defect": ident,
    }
    return Outcome(report, {"defects": (["m", "n_max", "lambda", "defect"], rows)})


def hypercontractivity(p, seed, workers):
    lat = torus.enumerate_lattice(p["m"])
    basis = fock.enumerate_basis(lat, p["n_max"])
    rows = []
    ok = True
    vectors = {
        "first-chaos": wick.first_chaos(basis, _mode_field(lat, p["mode"])),
        "mixed": fock.random_vector(basis, seed, orders=range(p["n_max"] + 1)),
    }
    first_ratio = None
    for name, phi in vectors.items():
        for q in p["ps"]:
            r = wick.hypercontractivity_check(phi, q, p["samples"], seed)
            ok &= r.passed
            rows.append((name, q, r.estimate, r.standard_error, r.bound, r.ratio))
            if name == "first-chaos" and q == 4.0:
                first_ratio = r.ratio
    ratio_ok = first_ratio is not None and abs(first_ratio / p["first_chaos_ratio"] - 1) <= p["ratio_tolerance"]
    energy_c = 0.0
    w = opnorm.Weight("power", 1.0)
    big = fock.enumerate_basis(lat, 3)
    for t in range(p["energy_vectors"]):
        phi = fock.random_vector(big, seed + 1000 + t)
        e, b = wick.energy_norm(w, phi, p["theta"])
        energy_c = max(energy_c, e / b)
    report = {
        "test": "hypercontractivity",
        "passed": bool(ok and ratio_ok),
        "first_chaos_p4_ratio": first_ratio,
        "energy_constant": float(energy_c),
    }
    return Outcome(report, {"moments": (["vector", "p", "estimate", "standard_error", "bound", "ratio"], rows)})


def fixed_point(p, seed, workers):
    basis = fock.enumerate_basis(torus.enumerate_lattice(p["m"]), p["n_max"])
    scans, rows = [], []
    for theta in p["thetas"]:
        s = kolmogorov.contraction_scan(
            basis, theta, p["eps_bar"], p["m"], p["multiples"], samples=p["samples"], seed=seed, tolerance=p["slope_tolerance"]
        )
        scans.append(s)
        for L, c, it, sc in zip(s["L"], s["contraction"], s["iterations"], s["scaled_correction"]):
            rows.append((theta, L, c, it, sc))
    small = fock.enumerate_basis(torus.enumerate_lattice(p["default_m"]), p["default_n_max"])
    theta = p["default_theta"]
    L = kolmogorov.default_L(small, theta, p["default_m"], p["eps_bar"])
    cut = kolmogorov.CutoffSpec(L, theta, p["eps_bar"])
    sharp = fock.random_vector(small, seed, orders=range(small.n_max))
    pair = kolmogorov.controlled_fixed_point(sharp, cut, p["default_m"])
    other = kolmogorov.controlled_fixed_point(sharp, cut, p["default_m"], start=fock.random_vector(small, seed + 1))
    unique = float(np.linalg.norm(pair.phi.coefficients - other.phi.coefficients) / np.linalg.norm(pair.phi.coefficients))
    limit = kolmogorov.apply_limit_generator(pair, cut, p["default_m"])
    direct = fock.apply_generator(p["default_m"], pair.phi, theta)
    agreement = float(fock.norm(limit - direct) / max(fock.norm(direct), 1e-300))
    default_run = {
        "L": L,
        "iterations": pair.iterations,
        "residual": pair.residual,
        "contraction": pair.contraction,
        "norm_ratio": pair.norm_ratio,
        "uniqueness_gap": unique,
        "limit_generator_agreement": agreement,
    }
    passed = all(s["passed"] for s in scans) and pair.iterations <= 50 and unique <= 1e-9 and agreement <= 1e-10
    report = {"test": "fixed-point", "passed": bool(passed), "scans": scans, "default": default_run}
    return Outcome(report, {"contraction": (["theta", "L", "contraction", "iterations", "scaled_correction"], rows)})


def backward_solve(p, seed, workers):
    basis = fock.enumerate_basis(torus.enumerate_lattice(p["m"]), p["n_max"])
    phi0 = fock.random_vector(basis, seed, orders=[1, 2])
    run = kolmogorov.backward_solve(
        phi0, p["theta"], p["m"], p["dt"], p["t_final"], number_power=p["number_power"], alpha=p["alpha"], gamma=p["gamma"]
    )
    smooth = fock.ChaosVector(basis, phi0.coefficients * np.exp(-p["smoothing"] * basis.eigenvalue(p["theta"])))
    order = kolmogorov.backward_order_check(smooth, p["theta"], p["m"], p["order_dts"], p["order_t_final"], min_ratio=p["min_ratio"])
    rate = kolmogorov.dissipativity_rate(run)
    mon = run.monitors
    passed = (
        order["passed"]
        and kolmogorov.contraction_slack(run) <= 10 * p["dt"] ** 2
        and rate <= 1e-8
        and mon["max_dissipation_identity_defect"] <= p["dissipation_tolerance"]
    )
    report = {
        "test": "backward-solve",
        "passed": bool(passed),
        "slack": kolmogorov.contraction_slack(run),
        "dissipativity_rate": rate,
        "monitors": mon,
        "order_check": order,
    }
    rows = [(float(t), float(n)) for t, n in zip(run.times, run.norms)]
    import json

    ledger = "".join(json.dumps(r) + "\n" for r in run.ledger).encode()
    return Outcome(report, {"norms": (["time", "norm"], rows)}, {"monitor_ledger.jsonl": ledger})


def duality_run(p, seed, workers):
    lat = torus.enumerate_lattice(p["m"])
    basis = fock.enumerate_basis(lat, p["n_max"])
    omega0 = torus.sample_energy_measure(lat, seed + 1)
    phi = fock.random_vector(basis, seed, orders=[0, 1, 2])
    linear = [duality.duality_check(phi, omega0, p["theta"], t=t, nonlinear=False, backward_dt=max(t / 100, 1e-5)) for t in p["linear_times"]]
    nonlinear = duality.duality_check(
        phi, omega0, p["theta"], t=p["t"], n_paths=p["n_paths"], sde_dt=p["sde_dt"], backward_dt=p["backward_dt"],
        seed=seed, workers=workers, threshold=p["threshold"],
    )
    a = p["drift_amplitude"]
    probe = wick.first_chaos(basis, _mode_field(lat, (1, 1)))
    field_ = torus.SpectralField.from_modes(lat, {(2, 1): a, (1, 0): a})
    effect = duality.drift_effect_check(
        probe, field_, p["theta"], p["drift_t"], p["drift_paths"], p["drift_dt"], seed, workers, p["threshold"]
    )
    passed = all(r["passed"] for r in linear) and nonlinear["passed"] and effect["passed"]
    report = {"test": "duality", "passed": bool(passed), "linear": linear, "nonlinear": nonlinear, "drift_effect": effect}
    rows = [(r["t"], r["relative_error"]) for r in linear]
    return Outcome(report, {"linear": (["t", "relative_error"], rows)})


def lambda_gap(p, seed, workers):
    rep = continuum.lambda_continuum_gap(lams=p["lams"], m=p["m"], theta=p["theta"], width=p["width"])
    rows = [(rep["lambdas"][i], rep["lambdas"][i + 1], g) for i, g in enumerate(rep["gaps"])]
    return Outcome(rep, {"gaps": (["lambda", "next_lambda", "gap"], rows)})


def appendix_scan(p, seed, workers):
    spec = verify.ConvolutionScanSpec(
        theta=p["theta"],
        alpha=p["alpha"],
        beta=p["beta"],
        lambdas=tuple(p["lambdas"]),
        constants=tuple(p["constants"]),
        wavevectors=tuple(tuple(k) for k in p["wavevectors"]),
    )
    rep = verify.convolution_bound_scan(spec)
    rows = [r[:7] for r in rep.pop("rows")]
    return Outcome(rep, {"scan": (["lambda", "kx", "ky", "C", "sum", "bound", "ratio"], rows)})


RUNNERS = {
    "sample-measure": sample_measure,
    "simulate": simulate,
    "invariance": invariance,
    "martingale": martingale,
    "ito-scaling": ito_scaling,
    "operator-check": operator_check,
    "adjointness": adjointness,
    "hypercontractivity": hypercontractivity,
    "fixed-point": fixed_point,
    "backward-solve": backward_solve,
    "duality": duality_run,
    "lambda-gap": lambda_gap,
    "appendix-scan": appendix_scan,
}

DESCRIPTIONS = {
    "sample-measure": "Draws from the Gaussian energy measure; per-mode variance against |2 pi k|^2.",
    "simulate": "Galerkin vorticity paths from a stationary start; writes selected mode amplitudes.",
    "invariance": "Stationarity of the energy measure under the nonlinear dynamics (mode variances, H^1 covariances).",
    "martingale": "Martingale residual and quadratic variation of linear cylinder observables.",
    "ito-scaling": "Scaling of additive functionals in time and their modulus of continuity.",
    "operator-check": "Weighted norms of the raising, lowering and full drift across the Galerkin cutoff.",
    "adjointness": "Raising/lowering adjointness, antisymmetry of the drift and the dissipation identity.",
    "hypercontractivity": "Moment bound E|phi|^p <= ||(p-1)^(N/2) phi||^p and the energy-norm bound.",
    "fixed-point": "Controlled fixed point: contraction factor against the cutoff scale L, convergence, uniqueness.",
    "backward-solve": "Backward equation solver: norm contraction, second-order evidence and a priori monitors.",
    "duality": "Path expectations against the backward solution, linear closed form and nonlinear Monte Carlo.",
    "lambda-gap": "Refinement of the lowering drift on scaled tori towards its continuum value.",
    "appendix-scan": "Brute-force lattice convolution sums against their power-law bound.",
}
