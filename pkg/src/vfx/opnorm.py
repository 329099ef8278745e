"""Chaos-level weights and norms of weighted drift compositions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import rng as _rng
from .fock import drift_operators


@dataclass(frozen=True)
class Weight:
    """Increasing positive function of the chaos order.

    ``kind`` is ``"power"`` for ``(1 + n)**value``, ``"geometric"`` for
    ``value**n`` or ``"table"`` for explicit values indexed by ``n``.
    Negative orders evaluate to 0: they label chaos levels that do not exist.
    """

    kind: str = "power"
    value: float | tuple = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "geometric", "table"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "geometric" and self.value < 1:
            raise ValueError("geometric weights need a ratio >= 1")
        if self.kind == "table":
            vals = np.asarray(self.value, dtype=float)
            if np.any(vals <= 0) or np.any(np.diff(vals) < 0):
                raise ValueError("weight tables must be positive and non-decreasing")

    @classmethod
    def one(cls):
        return cls("power", 0.0)

    def __call__(self, n):
        n = np.asarray(n)
        if self.kind == "power":
            out = (1.0 + np.maximum(n, 0)) ** float(self.value)
        elif self.kind == "geometric":
            out = float(self.value) ** np.maximum(n, 0).astype(float)
        else:
            table = np.asarray(self.value, dtype=float)
            out = table[np.clip(n, 0, len(table) - 1)]
        return np.where(n < 0, 0.0, out)

    def doubling_constant(self, n_max=64):
        """``sup_n w(n+1)/w(n)`` over the first ``n_max`` orders."""
        n = np.arange(n_max)
        return float(np.max(self(n + 1) / self(n)))


def apply_weight(w, phi, shift=0):
    """Multiply the order-n component by ``w(n + shift)``."""
    from .fock import ChaosVector

    return ChaosVector(phi.basis, phi.coefficients * w(phi.basis.order + shift), phi.truncated)


@dataclass(frozen=True)
class OperatorSpec:
    """``w_l(N) (1-L)^a core [w_r(N+s) (N+o)^b (1-L)^c]^-1``.

    The norm of this composite is the best constant in
    ``||w_l(N) (1-L)^a core phi|| <= C ||w_r(N+s) (N+o)^b (1-L)^c phi||``.
    ``right_shift`` may be a tuple, in which case ``w_r(N+s)`` is summed over
    its entries.  Right-hand weights that vanish mark inputs the core annihilates.
    """

    core: str = "identity"
    theta: float = 1.5
    m: float | None = None
    left_weight: Weight = Weight()
    left_power: float = 0.0
    right_weight: Weight = Weight()
    right_shift: int | tuple = 0
    right_number_power: float = 0.0
    right_number_offset: float = 1.0
    right_power: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.core not in ("identity", "gplus", "gminus", "drift"):
            raise ValueError(f"unknown core {self.core!r}")
        for name in ("left_power", "right_power", "right_number_power"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def composite_matrix(spec, basis):
    """The composite in orthonormal coordinates, as a sparse matrix."""
    n = basis.order
    resolvent = 1.0 + basis.eigenvalue(spec.theta)
    left = spec.left_weight(n) * resolvent**spec.left_power
    shifts = spec.right_shift if isinstance(spec.right_shift, tuple) else (spec.right_shift,)
    right = (
        sum(spec.right_weight(n + s) for s in shifts)
        * (n + spec.right_number_offset) ** spec.right_number_power
        * resolvent**spec.right_power
    )
    inv_right = np.divide(1.0, right, out=np.zeros_like(right), where=right > 0)
    if spec.core == "identity":
        core = sp.identity(basis.size, format="csr")
    else:
        ops = drift_operators(basis, spec.m)
        core = {"gplus": ops.gplus, "gminus": ops.gminus, "drift": ops.generator_drift}[spec.core]
    if spec.core != "identity":
        dead = np.flatnonzero(right <= 0)
        if len(dead) and abs(core[:, dead]).sum() > 0:
            raise ValueError("right-hand weight vanishes on inputs the core does not annihilate")
    root = np.sqrt(basis.weight)
    return sp.diags(root * left) @ core @ sp.diags(inv_right / root)


@dataclass
class NormEstimate:
    value: float
    iterations: int
    converged: bool


def largest_singular_value(matrix, tol=1e-6, max_iter=10_000, seed=0):
    """Power iteration on ``T^* T`` from a fixed random start vector."""
    matrix = sp.csr_matrix(matrix)
    adjoint = matrix.conj().T.tocsr()
    gen = _rng.stream(seed, _rng.START_VECTOR)
    v = gen.standard_normal(matrix.shape[1])
    v /= np.linalg.norm(v)
    previous = 0.0
    for it in range(1, max_iter + 1):
        w = matrix @ v
        sigma = float(np.linalg.norm(w))
        if sigma == 0.0:
            return NormEstimate(0.0, it, True)
        v = adjoint @ w
        nv = np.linalg.norm(v)
        v /= nv
        if abs(sigma - previous) <= tol * sigma:
            return NormEstimate(sigma, it, True)
        previous = sigma
    warnings.warn(f"power iteration stopped after {max_iter} iterations at {previous:.6g}", RuntimeWarning)
    return NormEstimate(previous, max_iter, False)


def operator_norm(spec, basis, tol=1e-6, max_iter=10_000, seed=0):
    return largest_singular_value(composite_matrix(spec, basis), tol, max_iter, seed)
