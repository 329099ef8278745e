"""Independent reference computations used by the test-suite.

Nothing here imports the operator or evaluation code under test; only the
lattice enumeration and the basis key layout are shared.
"""

import itertools
from collections import defaultdict
from math import factorial

import numpy as np

TWO_PI = 2 * np.pi


def ordered_tuple_norm(basis, coeffs):
    """Chaos norm by summing over every ordered tuple of modes."""
    lat = basis.lattice
    value = {}
    for idx in range(basis.size):
        value[tuple(basis.key(idx))] = coeffs[idx]
    total = 0.0
    for n in range(basis.n_max + 1):
        for tup in itertools.product(range(lat.size), repeat=n):
            c = value.get(tuple(sorted(tup)), 0.0)
            if c == 0:
                continue
            w = factorial(n) * lat.lam ** (-2 * n)
            for i in tup:
                w *= (TWO_PI * lat.norms[i]) ** 2
            total += w * abs(c) ** 2
    return total


# Polynomials in the mode variables z_j (j over all lattice modes) are dicts
# mapping a sorted tuple of mode indices to a coefficient.


def _padd(acc, mono, c):
    acc[tuple(sorted(mono))] += c


def wick_monomial(lat, variables):
    """Expand the Wick product of the listed variables into ordinary monomials."""
    var = (lat.lam * TWO_PI * lat.norms) ** 2
    out = defaultdict(complex)

    def rec(remaining, sign_coef, kept):
        if not remaining:
            _padd(out, kept, sign_coef)
            return
        first, rest = remaining[0], remaining[1:]
        rec(rest, sign_coef, kept + [first])
        for pos, other in enumerate(rest):
            if other == lat.size - 1 - first:
                rec(rest[:pos] + rest[pos + 1:], -sign_coef * var[first], kept)

    rec(list(variables), 1.0, [])
    return out


def chaos_to_polynomial(basis, coeffs):
    lat = basis.lattice
    poly = defaultdict(complex)
    for idx in np.flatnonzero(coeffs):
        key = basis.key(idx)
        n = len(key)
        mult = factorial(n)
        for _, grp in itertools.groupby(key):
            mult //= factorial(len(list(grp)))
        variables = [lat.size - 1 - int(k) for k in key]
        scale = lat.lam ** (-2 * n) * mult * coeffs[idx]
        for mono, c in wick_monomial(lat, variables).items():
            poly[mono] += scale * c
    return poly


def _derivative(poly, j):
    out = defaultdict(complex)
    for mono, c in poly.items():
        count = mono.count(j)
        if count:
            lst = list(mono)
            lst.remove(j)
            out[tuple(lst)] += c * count
    return out


def _multiply(p1, p2):
    out = defaultdict(complex)
    for m1, c1 in p1.items():
        for m2, c2 in p2.items():
            _padd(out, m1 + m2, c1 * c2)
    return out


def nonlinearity_polynomials(lat, m):
    """``B_hat(k)`` as a quadratic polynomial for every mode, from the defining convolution."""
    k = lat.modes
    out = {}
    for a in range(lat.size):
        poly = defaultdict(complex)
        if lat.norms[a] <= m + 1e-12:
            for p in range(lat.size):
                for q in range(lat.size):
                    if np.allclose(k[p] + k[q], k[a]) and lat.norms[p] <= m + 1e-12 and lat.norms[q] <= m + 1e-12:
                        # div(u w) with u = K * w, K_hat(p) = -2 pi i p_perp / |2 pi p|^2
                        uhat = -2j * np.pi * np.array([k[p][1], -k[p][0]]) / (TWO_PI**2 * k[p] @ k[p])
                        c = 2j * np.pi * (k[a] @ uhat) / lat.lam**2
                        _padd(poly, (p, q), c)
        out[a] = poly
    return out


def ito_generator(lat, poly, theta, m, nonlinear=True):
    """Apply the generator of the Galerkin equation to a polynomial via the Ito formula."""
    result = defaultdict(complex)
    B = nonlinearity_polynomials(lat, m) if nonlinear else None
    for j in range(lat.size):
        mu = (TWO_PI * lat.norms[j]) ** (2 * theta)
        dj = _derivative(poly, j)
        if not dj:
            continue
        for mono, c in _multiply({(j,): -mu}, dj).items():
            result[mono] += c
        if nonlinear:
            for mono, c in _multiply(B[j], dj).items():
                result[mono] -= c
        diff = lat.lam**2 * (TWO_PI * lat.norms[j]) ** (2 * theta + 2)
        for mono, c in _derivative(dj, lat.size - 1 - j).items():
            result[mono] += diff * c
    return result


def polynomials_close(p1, p2, tol):
    keys = set(p1) | set(p2)
    scale = max([abs(v) for v in p1.values()] + [abs(v) for v in p2.values()] + [1e-300])
    return all(abs(p1.get(k, 0) - p2.get(k, 0)) <= tol * scale for k in keys)


def evaluate_polynomial(poly, full_values):
    """Evaluate on an ensemble of full coefficient arrays, shape (S, M)."""
    total = np.zeros(full_values.shape[0], dtype=complex)
    for mono, c in poly.items():
        term = np.full(full_values.shape[0], c, dtype=complex)
        for j in mono:
            term = term * full_values[:, j]
        total += term
    return total


def pseudospectral_nonlinearity(field, m):
    """Real-space product on an N x N grid with N > 4 m lam, transforms by direct summation."""
    from vfx.torus import biot_savart, full_coefficients

    lat = field.lattice
    lam = lat.lam
    N = int(np.ceil(4 * m * lam)) + 1
    x = np.arange(N) * lam / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], 1)
    v = field.project(m)
    u = biot_savart(v)
    E = np.exp(2j * np.pi * pts @ lat.modes.T)
    vr = E @ v.full() / lam**2
    u1 = E @ full_coefficients(u.u1) / lam**2
    u2 = E @ full_coefficients(u.u2) / lam**2
    c1 = np.conj(E).T @ (u1 * vr) * (lam / N) ** 2
    c2 = np.conj(E).T @ (u2 * vr) * (lam / N) ** 2
    k = lat.modes
    out = 2j * np.pi * (k[:, 0] * c1 + k[:, 1] * c2)
    out[lat.norms > m + 1e-12] = 0
    return out[lat.n_canonical:]
