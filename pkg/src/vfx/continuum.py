"""Lattice refinement of the lowering drift on the scaled torus.

A second-order kernel given as a function on the plane is sampled on the
lattice ``lam^-1 Z^2``; the lowering part of the drift maps it to a
first-order kernel.  Refining ``lam`` turns the lattice sum into a Riemann
sum, and successive refinements should approach the continuum value.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erfc

from .torus import TWO_PI, enumerate_lattice


def cutoff_weight(norms, m, width=0.0):
    """Sharp indicator of ``|p| <= m``, or a smooth erfc step of the given width."""
    if width <= 0:
        return (norms <= m + 1e-12).astype(float)
    return 0.5 * erfc((norms - m) / width)


def lower_kernel(kernel, lam, m, outputs, width=0.0):
    """``(G_minus phi)(k)`` for a second-order kernel at the output modes ``k``.

    ``kernel(p, q)`` takes arrays of shape (..., 2) and returns the symmetric
    kernel values.  The sum runs over lattice modes ``p`` with ``q = k - p``,
    both inside the Galerkin cutoff.
    """
    modes = enumerate_lattice(m, lam).modes
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    out = np.zeros(len(outputs), dtype=np.complex128)
    chi_p = cutoff_weight(np.linalg.norm(modes, axis=1), m, width)
    for i, k in enumerate(outputs):
        q = k - modes
        qn = np.linalg.norm(q, axis=1)
        keep = (qn > 1e-12) & (chi_p > 0)
        p, q = modes[keep], q[keep]
        chi = chi_p[keep] * cutoff_weight(qn[keep], m, width)
        cross = p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
        # d(p, q) = (p . q_perp)(|p|^2 - |q|^2) / (2 |p + q|^2)
        d = 0.5 * cross * (np.sum(p**2, axis=1) - np.sum(q**2, axis=1)) / np.dot(k, k)
        out[i] = 2 * TWO_PI**2 / lam**2 * np.sum(chi * d * kernel(p, q))
    return out


def anisotropic_kernel(p, q):
    """Product kernel ``g(p) g(q)`` with ``g(p) = |p| (1 + p_x^2 + p_x p_y) exp(-|p|^2 / 2)``.

    The factor ``|p|`` keeps the lattice sums from converging spectrally fast;
    the anisotropy keeps the continuum value away from zero.
    """

    def g(v):
        r2 = np.sum(v**2, axis=-1)
        return np.sqrt(r2) * (1 + v[..., 0] ** 2 + v[..., 0] * v[..., 1]) * np.exp(-r2 / 2)

    return g(p) * g(q)


def lambda_continuum_gap(kernel=anisotropic_kernel, lams=(1, 2, 4, 8), m=6.0, theta=1.5, width=0.0):
    """Gaps ``||(1 - L_theta)^(-1/2) (G^lam phi - G^lam' phi)||`` between successive lattices.

    All lowered kernels are compared on the coarsest lattice, which every
    finer one contains when the ``lams`` are nested, with the norm of that
    lattice.  A Richardson step from the last two gaps estimates the limit.
    """
    lams = list(lams)
    coarse = enumerate_lattice(m, lams[0])
    for lam in lams[1:]:
        ratio = lam / lams[0]
        if abs(ratio - round(ratio)) > 1e-12:
            raise ValueError("lattice scales must be integer multiples of the first")
    k = coarse.modes
    kn = coarse.norms
    weight = (TWO_PI * kn) ** 2 / (1 + (TWO_PI * kn) ** (2 * theta)) / coarse.lam**2
    values = [lower_kernel(kernel, lam, m, k, width) for lam in lams]

    def size(v):
        return float(np.sqrt(np.sum(weight * np.abs(v) ** 2)))

    gaps = [size(values[i + 1] - values[i]) for i in range(len(lams) - 1)]
    ratios = [gaps[i] / gaps[i + 1] if gaps[i + 1] > 0 else np.inf for i in range(len(gaps) - 1)]
    limit_gap = None
    if len(gaps) >= 2 and gaps[-1] > 0:
        rho = gaps[-2] / gaps[-1]
        if rho > 1:
            extrapolated = values[-1] + (values[-1] - values[-2]) / (rho - 1)
            limit_gap = size(extrapolated - values[-1])
    all_zero = all(g == 0 for g in gaps)
    decreasing = all_zero or all(r >= 1.5 for r in ratios)
    beaten = all_zero or (limit_gap is not None and limit_gap < gaps[0])
    return {
        "test": "lambda-gap",
        "lambdas": [float(x) for x in lams],
        "m": float(m),
        "theta": float(theta),
        "gaps": gaps,
        "ratios": [float(r) for r in ratios],
        "extrapolation_gap": limit_gap,
        "norms": [size(v) for v in values],
        "passed": bool(decreasing and beaten),
    }
