"""Cylinder functionals ``Phi(w(f_1), ..., w(f_d))`` with polynomial or Wick-exponential outer part."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .torus import TWO_PI, galerkin_nonlinearity, h1_inner, pair_field, weighted_inner


@dataclass(eq=False)
class CylinderFunction:
    """``tests`` are the f_i; ``polynomial`` maps exponent tuples to coefficients.

    With ``wick=True`` the functional is ``:exp(i w(f)): = exp(i w(f) + ||f||^2 / 2)``
    for the single test function, norm taken in the energy covariance.
    """

    tests: list
    polynomial: dict = field(default_factory=dict)
    wick: bool = False

    def __post_init__(self):
        if not self.tests:
            raise ValueError("a cylinder function needs at least one test function")
        if self.wick and len(self.tests) != 1:
            raise ValueError("the Wick exponential takes a single test function")
        d = len(self.tests)
        for exps in self.polynomial:
            if len(exps) != d or min(exps) < 0:
                raise ValueError(f"exponent tuple {exps} does not match {d} test functions")

    @classmethod
    def linear(cls, f):
        return cls([f], {(1,): 1.0})

    @classmethod
    def constant(cls, f, value=1.0):
        return cls([f], {(0,): value})

    @classmethod
    def wick_exponential(cls, f):
        return cls([f], {}, wick=True)

    @property
    def lattice(self):
        return self.tests[0].lattice

    def coordinates(self, w):
        """``(..., d)`` array of pairings ``w(f_i)``."""
        return np.stack([pair_field(w, f) for f in self.tests], axis=-1)

    def outer(self, x):
        out = np.zeros(x.shape[:-1])
        for exps, c in self.polynomial.items():
            out = out + c * np.prod(x ** np.array(exps), axis=-1)
        return out

    def gradient(self, x):
        d = len(self.tests)
        out = np.zeros((*x.shape[:-1], d))
        for exps, c in self.polynomial.items():
            for i in range(d):
                if exps[i]:
                    e = np.array(exps)
                    e[i] -= 1
                    out[..., i] += c * exps[i] * np.prod(x**e, axis=-1)
        return out

    def hessian(self, x):
        d = len(self.tests)
        out = np.zeros((*x.shape[:-1], d, d))
        for exps, c in self.polynomial.items():
            for i in range(d):
                for j in range(d):
                    e = np.array(exps)
                    factor = e[i]
                    e[i] -= 1
                    factor *= e[j]
                    e[j] -= 1
                    if factor > 0:
                        out[..., i, j] += c * factor * np.prod(x**e, axis=-1)
        return out

    def evaluate(self, w):
        x = self.coordinates(w)
        if self.wick:
            f = self.tests[0]
            return np.exp(1j * x[..., 0] + 0.5 * h1_inner(f, f))
        return self.outer(x)

    def noise_gram(self, theta):
        """``<A^(theta+1) f_i, f_j>``."""
        weights = (TWO_PI * self.lattice.canonical_norms) ** (2 * theta + 2)
        d = len(self.tests)
        return np.array([[weighted_inner(self.tests[i], self.tests[j], weights) for j in range(d)] for i in range(d)])

    def generator(self, w, theta, m=None, nonlinear=True):
        """Generator of the Galerkin dynamics applied pointwise (polynomial case only)."""
        if self.wick:
            raise NotImplementedError("the generator is implemented for polynomial outer functions")
        x = self.coordinates(w)
        damp = (TWO_PI * self.lattice.canonical_norms) ** (2 * theta)
        drift = np.stack([pair_field(w, f.multiplier(-damp)) for f in self.tests], axis=-1)
        if nonlinear:
            b = galerkin_nonlinearity(w, m)
            drift = drift - np.stack([pair_field(b, f) for f in self.tests], axis=-1)
        first = np.sum(self.gradient(x) * drift, axis=-1)
        second = np.einsum("...ij,ij->...", self.hessian(x), self.noise_gram(theta))
        return first + second

    def energy(self, w, theta):
        """Quadratic-variation density ``2 sum_ij d_i Phi d_j Phi <A^(theta+1) f_i, f_j>``."""
        if self.wick:
            raise NotImplementedError("the energy density is implemented for polynomial outer functions")
        g = self.gradient(self.coordinates(w))
        return 2 * np.einsum("...i,ij,...j->...", g, self.noise_gram(theta), g)
