"""Forward/backward duality: path expectations against the backward equation."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .fock import ChaosVector, enumerate_basis
from .kolmogorov import backward_solve
from .sde import SdeConfig, simulate
from .torus import TWO_PI, SpectralField, mode_variance
from .wick import evaluate_chaos


def ornstein_uhlenbeck_expectation(phi, omega0, theta, t):
    """``E[phi(w_t) | w_0 = omega0]`` for the linear equation, chaos order at most 2.

    The linear flow keeps ``w_t`` Gaussian with mean ``exp(-t A^theta) omega0``
    and conditional covariance ``V (1 - exp(-2 t A^theta))``, where ``V`` is the
    stationary variance that the Wick products subtract.  For a Gaussian with
    mean ``a`` and covariance ``C``, ``E :z_u z_v: = a_u a_v + C_uv - V_uv``.
    """
    basis = phi.basis
    if phi.top_order() > 2:
        raise ValueError("the closed form covers chaos orders up to 2")
    lat = basis.lattice
    mu = (TWO_PI * lat.canonical_norms) ** (2 * theta)
    mean = SpectralField(lat, omega0.coefficients * np.exp(-mu * t))
    value = evaluate_chaos(phi, mean)
    # conditional covariance term of the order-2 keys {k, -k}
    rows = basis.levels[2]
    sl = basis.level_slice(2)
    diagonal = np.flatnonzero(rows[:, 1] == lat.negative(rows[:, 0]))
    mu_full = (TWO_PI * lat.norms[rows[diagonal, 0]]) ** (2 * theta)
    var_full = np.concatenate([mode_variance(lat)[::-1], mode_variance(lat)])[rows[diagonal, 0]]
    cond = var_full * -np.expm1(-2 * mu_full * t)
    coeff = phi.coefficients[sl][diagonal] * basis.multiplicity[sl][diagonal]
    return complex(value + np.sum(coeff * cond) / lat.lam**4)


def _embed(phi, basis):
    """Copy ``phi`` into a larger basis on the same lattice."""
    out = ChaosVector.zeros(basis)
    for n in range(phi.basis.n_max + 1):
        rows = phi.basis.levels[n]
        out.coefficients[basis.lookup(n, rows)] = phi.coefficients[phi.basis.level_slice(n)]
    return out


def duality_check(
    phi0,
    omega0,
    theta=1.5,
    m=None,
    t=0.1,
    nonlinear=True,
    n_paths=10_000,
    sde_dt=1e-4,
    backward_dt=1e-4,
    seed=0,
    workers=None,
    threshold=4.0,
    truncation_gap=True,
):
    """Compare the forward expectation of ``phi0`` with the backward solution at ``omega0``.

    Linear regime: the backward value is checked against the closed-form
    Gaussian expectation (relative tolerance 1e-8).  Nonlinear regime: against
    a Monte-Carlo estimate, with slack ``threshold * SE + |gap|`` where the gap
    is the change of the backward value when the basis grows by one order.
    """
    basis = phi0.basis
    m = basis.lattice.m if m is None else m
    run = backward_solve(phi0, theta, m, dt=backward_dt, t_final=t, nonlinear=nonlinear, monitor=False)
    backward = complex(evaluate_chaos(run.final(), omega0))
    report = {"test": "duality", "t": float(t), "nonlinear": bool(nonlinear), "backward": backward}
    if not nonlinear:
        forward = ornstein_uhlenbeck_expectation(phi0, omega0, theta, t)
        err = abs(forward - backward) / max(abs(forward), 1e-300)
        report.update(forward=forward, relative_error=float(err), passed=bool(err <= 1e-8))
        return _jsonable(report)
    gap = 0.0
    if truncation_gap:
        bigger = enumerate_basis(basis.lattice, basis.n_max + 1)
        run2 = backward_solve(_embed(phi0, bigger), theta, m, dt=backward_dt, t_final=t, monitor=False)
        gap = abs(complex(evaluate_chaos(run2.final(), omega0)) - backward)
    cfg = SdeConfig(theta=theta, m=basis.lattice.m, lam=basis.lattice.lam, dt=sde_dt, t_final=t, n_paths=n_paths, seed=seed)
    cfg = replace(cfg, snapshot_stride=max(cfg.n_steps, 1))
    diag = simulate(cfg, omega0, observers={"value": _ChaosObserver(phi0)}, workers=workers)
    final = diag.observables["value"][~diag.blown, -1]
    forward = complex(final.mean())
    se = float(np.hypot(final.real.std(ddof=1), final.imag.std(ddof=1)) / np.sqrt(len(final)))
    diff = abs(forward - backward)
    report.update(
        forward=forward,
        standard_error=se,
        truncation_gap=float(gap),
        difference=float(diff),
        allowance=float(threshold * se + gap),
        blowups=diag.blowups,
        passed=bool(diff <= threshold * se + gap and diag.blowups == 0),
    )
    return _jsonable(report)


def drift_effect_check(phi0, omega0, theta=1.5, t=0.002, n_paths=2000, dt=1e-5, seed=0, workers=None, threshold=4.0):
    """Isolate the nonlinear part of the duality with common random numbers.

    Nonlinear and linear paths share their noise, so the paired difference of
    ``phi0(w_t)`` has a small variance and resolves the effect of the drift,
    which is compared with the backward difference.  ``flipped_z`` scores the
    hypothesis that the drift enters with the opposite sign.
    """
    basis = phi0.basis
    values = {}
    backward = {}
    for nonlinear in (True, False):
        cfg = SdeConfig(
            theta=theta,
            m=basis.lattice.m,
            lam=basis.lattice.lam,
            dt=dt,
            t_final=t,
            n_paths=n_paths,
            seed=seed,
            nonlinear=nonlinear,
        )
        cfg = replace(cfg, snapshot_stride=max(cfg.n_steps, 1))
        diag = simulate(cfg, omega0, observers={"value": _ChaosObserver(phi0)}, workers=workers)
        values[nonlinear] = diag.observables["value"][:, -1].real
        run = backward_solve(phi0, theta, basis.lattice.m, dt=dt, t_final=t, nonlinear=nonlinear, monitor=False)
        backward[nonlinear] = float(np.real(evaluate_chaos(run.final(), omega0)))
    diff = values[True] - values[False]
    forward = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / np.sqrt(len(diff)))
    target = backward[True] - backward[False]
    z = (forward - target) / se
    flipped = (forward + target) / se
    return {
        "test": "drift-effect",
        "forward_effect": forward,
        "standard_error": se,
        "backward_effect": target,
        "z": float(z),
        "flipped_z": float(flipped),
        "passed": bool(abs(z) <= threshold < abs(flipped)),
    }


class _ChaosObserver:
    def __init__(self, phi):
        self.phi = phi

    def __call__(self, w):
        return evaluate_chaos(self.phi, w)


def _jsonable(report):
    out = {}
    for k, v in report.items():
        if isinstance(v, complex):
            out[k] = v.real if v.imag == 0 else [v.real, v.imag]
        else:
            out[k] = v
    return out
