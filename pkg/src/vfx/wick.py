"""Pointwise evaluation of chaos expansions and the moment and energy bounds built on it."""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .fock import ChaosVector
from .torus import TWO_PI, full_coefficients, mode_variance, sample_energy_measure


def wick_products(keys, values, covariance_partner, variance):
    """Wick products ``:z_{v_1} ... z_{v_n}:`` for rows of variable indices.

    ``keys`` has shape (R, n); ``values`` holds the variables on its last
    axis with an optional leading sample axis.  Two variables are correlated
    only when they are Hermitian partners, with covariance ``variance``.
    Built by the recursion ``:X z: = :X: z - sum_{x in X} E[x z] :X minus x:``
    over subsets of positions.
    """
    R, n = keys.shape
    vals = np.atleast_2d(values)
    S = vals.shape[0]
    table = {0: np.ones((S, R), dtype=np.complex128)}
    for mask in range(1, 1 << n):
        j = mask.bit_length() - 1
        prev = mask & ~(1 << j)
        acc = table[prev] * vals[:, keys[:, j]]
        vj = keys[:, j]
        for i in range(j):
            if prev >> i & 1:
                vi = keys[:, i]
                cov = np.where(covariance_partner[vi] == vj, variance[vi], 0.0)
                if np.any(cov):
                    acc = acc - cov * table[prev & ~(1 << i)]
        table[mask] = acc
    return table[(1 << n) - 1]


def evaluate_chaos(phi, field_):
    """``sum_n W_n(phi_n)(w)`` at a field or an ensemble of fields."""
    basis = phi.basis
    lat = basis.lattice
    if not lat.compatible(field_.lattice):
        raise ValueError("field and chaos vector use different lattices")
    single = field_.coefficients.ndim == 1
    full = np.atleast_2d(full_coefficients(field_.coefficients))
    var_full = np.concatenate([mode_variance(lat)[::-1], mode_variance(lat)])
    partner = lat.negative(np.arange(lat.size))
    total = np.zeros(full.shape[0], dtype=np.complex128)
    for n in range(basis.n_max + 1):
        sl = basis.level_slice(n)
        coeffs = phi.coefficients[sl]
        nz = np.flatnonzero(coeffs)
        if len(nz) == 0:
            continue
        if n == 0:
            total += coeffs[0]
            continue
        variables = lat.negative(basis.levels[n][nz])
        scale = basis.multiplicity[sl][nz] * coeffs[nz] / lat.lam ** (2 * n)
        for start in range(0, len(nz), 4096):
            chunk = slice(start, start + 4096)
            prods = wick_products(variables[chunk], full, partner, var_full)
            total += prods @ scale[chunk]
    return total[0] if single else total


def first_chaos(basis, f):
    """Chaos vector of the linear functional ``w -> w(f)``."""
    out = ChaosVector.zeros(basis)
    sl = basis.level_slice(1)
    out.coefficients[sl] = full_coefficients(f.coefficients)
    return out


def hypercontractivity_bound(phi, p):
    """``||c_p^N phi||^p`` with ``c_p = sqrt(p - 1)``."""
    factor = (p - 1.0) ** (phi.basis.order / 2.0)
    return float(np.sqrt(np.sum(phi.basis.weight * np.abs(factor * phi.coefficients) ** 2)) ** p)


@dataclass
class HypercontractivityReport:
    p: float
    estimate: float
    standard_error: float
    bound: float
    ratio: float
    passed: bool

    def as_dict(self):
        return dict(self.__dict__)


def hypercontractivity_check(phi, p, samples=20_000, seed=0):
    """Monte-Carlo ``E|phi|^p`` under the energy measure against ``||c_p^N phi||^p``."""
    fields = sample_energy_measure(phi.basis.lattice, seed, size=samples)
    values = np.abs(evaluate_chaos(phi, fields)) ** p
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(samples))
    bound = hypercontractivity_bound(phi, p)
    return HypercontractivityReport(p, est, se, bound, est / bound, est - 5 * se <= bound)


def energy_norm(w, phi, theta):
    """Squared energy norm and the bound side.

    Returns ``(energy, bound)`` with
    ``energy = 2 sum_n n! w(n-1)^2 n sum_{ordered k} prod_{i>=2} |2 pi k_i|^2 |2 pi k_1|^(2 theta + 2) |phi_n|^2``
    (lattice-normalised) and ``bound = 2 ||w(N-1) (1 - L_theta)^(1/2) phi||^2``
    restricted to orders n >= 1.
    """
    basis = phi.basis
    lat = basis.lattice
    sq = (TWO_PI * lat.norms) ** 2
    top = (TWO_PI * lat.norms) ** (2 * theta + 2)
    coeff2 = np.abs(phi.coefficients) ** 2
    energy = 0.0
    for n in range(1, basis.n_max + 1):
        sl = basis.level_slice(n)
        rows = basis.levels[n]
        per_position = np.zeros(len(rows))
        for i in range(n):
            others = np.prod(np.delete(sq[rows], i, axis=1), axis=1) if n > 1 else 1.0
            per_position += top[rows[:, i]] * others
        # each ordered tuple of a multiset puts each position first equally often
        ordered = basis.multiplicity[sl] / n * per_position
        energy += 2 * factorial(n) * float(w(n - 1)) ** 2 * n * lat.lam ** (-2 * n) * np.sum(ordered * coeff2[sl])
    positive = basis.order >= 1
    scaled = w(basis.order - 1) ** 2 * (1 + basis.eigenvalue(theta))
    bound = 2 * float(np.sum((basis.weight * scaled * coeff2)[positive]))
    return energy, bound

