"""Exponential-Euler integration of the Galerkin vorticity equation and path statistics.

The equation for each retained mode is

    d w_hat(k) = -(|2 pi k|^(2 theta) w_hat(k) + B_m(w)_hat(k)) dt + sqrt(2) |2 pi k|^(theta+1) dW_k

with complex Brownian motions scaled so that the energy measure is
stationary for the linear part.  Paths are simulated in chunks that share
nothing but read-only tables; each path owns the counter-based stream
keyed by ``(seed, path index)``.
"""

from __future__ import annotations

import multiprocessing
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .torus import TWO_PI, SpectralField, enumerate_lattice, h1_inner, mode_variance, pair_field, triad_table

BLOWUP_THRESHOLD = 1e8
CHUNK_PATHS = 500
NOISE_BLOCK = 64


@dataclass(frozen=True)
class SdeConfig:
    theta: float = 1.5
    m: float = 4.0
    lam: float = 1.0
    dt: float = 1e-3
    t_final: float = 1.0
    n_paths: int = 1000
    seed: int = 0
    snapshot_stride: int = 1
    nonlinear: bool = True
    noise: bool = True

    def __post_init__(self):
        if self.theta <= 1:
            raise ValueError("theta must exceed 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.n_paths < 1 or self.snapshot_stride < 1:
            raise ValueError("n_paths and snapshot_stride must be positive")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def lattice(self):
        return enumerate_lattice(self.m, self.lam)


class _Integrator:
    def __init__(self, cfg, lattice=None):
        self.cfg = cfg
        self.lattice = lattice if lattice is not None else cfg.lattice()
        lat = self.lattice
        wave = TWO_PI * lat.canonical_norms
        mu = wave ** (2 * cfg.theta)
        sigma = np.sqrt(2.0) * wave ** (cfg.theta + 1)
        self.decay = np.exp(-mu * cfg.dt)
        self.noise_amp = lat.lam * sigma * np.sqrt(-np.expm1(-2 * mu * cfg.dt) / (2 * mu))
        if not cfg.noise:
            self.noise_amp = np.zeros_like(self.noise_amp)
        self.table = triad_table(lat, cfg.m) if cfg.nonlinear else None
        self.hm2_weight = 2 * lat.canonical_norms**-4.0 / lat.lam**2

    def advance(self, coeffs, gaussians):
        drift = coeffs
        if self.table is not None:
            drift = coeffs - self.cfg.dt * self.table.apply(coeffs)
        return self.decay * drift + self.noise_amp * gaussians

    def blown(self, coeffs):
        hm2 = np.sum(self.hm2_weight * np.abs(coeffs) ** 2, axis=-1)
        return ~np.isfinite(hm2) | (hm2 > BLOWUP_THRESHOLD**2)


def step(w, cfg, noise_key):
    """One exponential-Euler step of a field (or ensemble) with noise from stream ``noise_key``."""
    integ = _Integrator(cfg, w.lattice)
    g = _rng.complex_normal(_rng.stream(cfg.seed, _rng.PATH, noise_key, 0xFFFF), w.coefficients.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = integ.advance(w.coefficients, g)
    if np.any(integ.blown(out)):
        raise FloatingPointError("nonlinearity overflowed during the step")
    return SpectralField(w.lattice, out)


@dataclass(eq=False)
class PathDiagnostics:
    """Recorded output of an ensemble of paths.

    ``observables[name]`` has shape (n_paths, len(times), ...); ``fields`` has
    shape (n_paths, len(field_times), n_canonical) when requested.  Blown-up
    paths are flagged in ``blown`` and hold NaN after the blow-up time.
    """

    lattice: object
    times: np.ndarray
    observables: dict
    field_times: np.ndarray
    fields: np.ndarray | None
    blown: np.ndarray
    config: SdeConfig = field(default=None)

    @property
    def blowups(self):
        return int(np.sum(self.blown))

    def field_at(self, i):
        return SpectralField(self.lattice, self.fields[:, i, :])


_JOB = None


def _run_chunk(chunk):
    cfg, initial, observers, record_steps, lattice = _JOB
    return _simulate_paths(cfg, lattice, initial, observers, record_steps, chunk)


def _simulate_paths(cfg, lattice, initial, observers, record_steps, chunk):
    first = chunk * CHUNK_PATHS
    ids = np.arange(first, min(first + CHUNK_PATHS, cfg.n_paths))
    integ = _Integrator(cfg, lattice)
    n_can = lattice.n_canonical
    streams = [_rng.stream(cfg.seed, _rng.PATH, int(p)) for p in ids]
    if isinstance(initial, str):
        std = np.sqrt(mode_variance(lattice))
        coeffs = np.stack([std * _rng.complex_normal(s, n_can) for s in streams])
    else:
        coeffs = np.broadcast_to(initial.coefficients, (len(ids), n_can)).copy()
    n_steps = cfg.n_steps
    obs_steps = np.arange(0, n_steps + 1, cfg.snapshot_stride)
    obs = {name: [] for name in observers}
    fields = []
    record = set(int(s) for s in record_steps)
    blown = np.zeros(len(ids), dtype=bool)

    def capture(step_index):
        if step_index % cfg.snapshot_stride == 0:
            wf = SpectralField(lattice, coeffs)
            for name, fn in observers.items():
                obs[name].append(np.asarray(fn(wf)))
        if step_index in record:
            fields.append(coeffs.copy())

    capture(0)
    block = None
    for s in range(n_steps):
        if s % NOISE_BLOCK == 0:
            size = min(NOISE_BLOCK, n_steps - s)
            block = np.stack([_rng.complex_normal(st, (size, n_can)) for st in streams], axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            coeffs = integ.advance(coeffs, block[s % NOISE_BLOCK])
        bad = integ.blown(coeffs) & ~blown
        if bad.any():
            blown |= bad
        if blown.any():
            coeffs[blown] = np.nan
        capture(s + 1)
    out_obs = {name: np.stack(vals, axis=1) for name, vals in obs.items()}
    out_fields = np.stack(fields, axis=1) if fields else None
    return obs_steps, out_obs, out_fields, blown


def default_workers():
    env = os.environ.get("VFX_WORKERS")
    return max(1, int(env)) if env else 1


def simulate(cfg, initial="sample-mu", observers=None, record_times=(), workers=None):
    """Simulate ``cfg.n_paths`` independent paths.

    ``initial`` is a SpectralField (shared starting point) or ``"sample-mu"``
    for independent draws from the energy measure.  ``observers`` maps names
    to picklable callables evaluated on the ensemble every
    ``snapshot_stride`` steps; ``record_times`` lists times whose full fields
    are kept.  Results do not depend on ``workers``.
    """
    global _JOB
    if isinstance(initial, str) and initial not in ("sample-mu", "sample-μ"):
        raise ValueError(f"unknown initial condition {initial!r}")
    lattice = cfg.lattice() if isinstance(initial, str) else initial.lattice
    observers = dict(observers or {})
    record_steps = [int(round(t / cfg.dt)) for t in record_times]
    if any(s < 0 or s > cfg.n_steps for s in record_steps):
        raise ValueError("record times must lie in [0, t_final]")
    n_chunks = -(-cfg.n_paths // CHUNK_PATHS)
    workers = default_workers() if workers is None else max(1, int(workers))
    _JOB = (cfg, initial, observers, record_steps, lattice)
    try:
        if workers > 1 and n_chunks > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                parts = list(pool.map(_run_chunk, range(n_chunks)))
        else:
            parts = [_run_chunk(c) for c in range(n_chunks)]
    finally:
        _JOB = None
    steps = parts[0][0]
    obs = {name: np.concatenate([p[1][name] for p in parts]) for name in observers}
    fields = np.concatenate([p[2] for p in parts]) if record_steps else None
    blown = np.concatenate([p[3] for p in parts])
    if blown.any():
        warnings.warn(f"{int(blown.sum())} of {cfg.n_paths} paths blew up", RuntimeWarning)
    return PathDiagnostics(
        lattice,
        steps * cfg.dt,
        obs,
        np.array(record_steps, dtype=float) * cfg.dt,
        fields,
        blown,
        cfg,
    )


def ou_variance(lattice, theta, t, initial_variance=0.0):
    """Closed-form variance of each canonical mode of the linear equation after time ``t``."""
    mu = (TWO_PI * lattice.canonical_norms) ** (2 * theta)
    stat = mode_variance(lattice)
    return stat + (initial_variance - stat) * np.exp(-2 * mu * t)


def _z(estimate, target, se):
    return (estimate - target) / se if se > 0 else (0.0 if estimate == target else np.inf)


def invariance_test(cfg, pairs=None, workers=None, threshold=5.0, times=None):
    """Compare per-mode second moments and energy covariances against the energy measure.

    Returns a dict with CSV-ready rows ``(time, mode_kx, mode_ky, empirical_var,
    target_var, z_score)``, pairing covariance rows, and the overall verdict.
    """
    if times is None:
        times = sorted({0.0, cfg.t_final / 2, cfg.t_final})
    diag = simulate(cfg, "sample-mu", record_times=times, workers=workers)
    lat = diag.lattice
    ok = ~diag.blown
    target = mode_variance(lat)
    rows = []
    for i, t in enumerate(diag.field_times):
        c = diag.fields[ok, i, :]
        sq = np.abs(c) ** 2
        est = sq.mean(axis=0)
        se = sq.std(axis=0, ddof=1) / np.sqrt(len(sq))
        for k in range(lat.n_canonical):
            jx, jy = lat.canonical_integer_modes[k]
            rows.append((float(t), int(jx), int(jy), float(est[k]), float(target[k]), float(_z(est[k], target[k], se[k]))))
    cov_rows = []
    for f, g in pairs or []:
        expected = h1_inner(f, g)
        for i, t in enumerate(diag.field_times):
            w = SpectralField(lat, diag.fields[ok, i, :])
            prod = pair_field(w, f) * pair_field(w, g)
            se = prod.std(ddof=1) / np.sqrt(len(prod))
            cov_rows.append((float(t), float(prod.mean()), float(expected), float(_z(prod.mean(), expected, se))))
    zmax = max([abs(r[5]) for r in rows] + [abs(r[3]) for r in cov_rows] + [0.0])
    return {
        "test": "invariance",
        "pass": bool(zmax <= threshold and diag.blowups == 0),
        "statistics": {"max_abs_z": zmax, "blowups": diag.blowups, "paths": cfg.n_paths, "checks": len(rows) + len(cov_rows)},
        "rows": rows,
        "covariance_rows": cov_rows,
    }


class CylinderObserver:
    """Records a cylinder function, its generator and its energy density."""

    def __init__(self, phi, theta, m, nonlinear=True):
        self.phi, self.theta, self.m, self.nonlinear = phi, theta, m, nonlinear

    def __call__(self, w):
        return np.stack(
            [
                self.phi.evaluate(w),
                self.phi.generator(w, self.theta, self.m, self.nonlinear),
                self.phi.energy(w, self.theta),
            ],
            axis=-1,
        )


class ValueObserver:
    def __init__(self, phi):
        self.phi = phi

    def __call__(self, w):
        return np.real(self.phi.evaluate(w))


def _trapezoid_cumulative(values, dt):
    inc = 0.5 * (values[:, 1:] + values[:, :-1]) * dt
    return np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def martingale_diagnostics(path, checkpoints=None, threshold=4.0, resolution_tol=0.05):
    """Martingale residual and quadratic variation of a recorded cylinder observer.

    ``path`` must carry the ``"cylinder"`` observable written by
    :class:`CylinderObserver`.
    """
    data = path.observables["cylinder"][~path.blown]
    times = path.times
    h = times[1] - times[0]
    value, gen, energy = data[..., 0], data[..., 1], data[..., 2]
    residual = value - value[:, :1] - _trapezoid_cumulative(gen, h)
    realized = np.concatenate(
        [np.zeros((len(residual), 1)), np.cumsum(np.diff(residual, axis=1) ** 2, axis=1)], axis=1
    )
    predicted = _trapezoid_cumulative(energy, h)
    if checkpoints is None:
        checkpoints = [len(times) // 4, len(times) // 2, len(times) - 1]
    rows = []
    for c in checkpoints:
        r = residual[:, c]
        se = r.std(ddof=1) / np.sqrt(len(r))
        qv_ratio = realized[:, c].mean() / predicted[:, c].mean() if predicted[:, c].mean() > 0 else np.nan
        rows.append(
            {
                "time": float(times[c]),
                "mean_residual": float(r.mean()),
                "standard_error": float(se),
                "z_score": float(_z(r.mean(), 0.0, se)),
                "realized_qv": float(realized[:, c].mean()),
                "predicted_qv": float(predicted[:, c].mean()),
                "qv_ratio": float(qv_ratio),
            }
        )
    cfg = path.config
    stiffness = None
    if cfg is not None:
        stiffness = float(h * np.max(np.abs(gen)) / max(np.max(np.abs(value)), 1e-300))
        if stiffness > resolution_tol:
            warnings.warn(f"snapshot spacing may be too coarse for the quadrature (dt*|L phi|/|phi| ~ {stiffness:.3g})")
    passed = all(abs(r["z_score"]) <= threshold for r in rows)
    qv_ok = all(np.isnan(r["qv_ratio"]) or 0.9 <= r["qv_ratio"] <= 1.1 for r in rows)
    return {
        "test": "martingale",
        "pass": bool(passed and qv_ok),
        "statistics": {"checkpoints": rows, "resolution": stiffness, "paths": int(len(residual))},
    }


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def additive_functional_scaling(cfg, phi, horizons=None, lags=None, workers=None):
    """Scaling of ``E sup_{t<=T} |int_0^t phi|^2`` in ``T`` and of ``E|phi(t+s) - phi(t)|^2`` in ``s``."""
    if horizons is None:
        horizons = [cfg.t_final / 2**j for j in range(3, -1, -1)]
    diag = simulate(cfg, "sample-mu", observers={"value": ValueObserver(phi)}, workers=workers)
    values = diag.observables["value"][~diag.blown]
    times = diag.times
    integral = _trapezoid_cumulative(values, times[1] - times[0])
    sup_sq = []
    for T in horizons:
        upto = times <= T + 1e-12
        sup_sq.append(float(np.mean(np.max(integral[:, upto] ** 2, axis=1))))
    report = {
        "test": "ito-scaling",
        "statistics": {"horizons": list(map(float, horizons)), "sup_square": sup_sq, "slope": _slope(horizons, sup_sq)},
    }
    if lags is not None:
        h = times[1] - times[0]
        incr = []
        for lag in lags:
            s = int(round(lag / h))
            incr.append(float(np.mean((values[:, s:] - values[:, :-s]) ** 2)))
        report["statistics"].update(lags=list(map(float, lags)), increment_square=incr, modulus_slope=_slope(lags, incr))
    return report
