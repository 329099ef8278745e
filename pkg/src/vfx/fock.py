"""Truncated chaos spaces over a Fourier lattice and the drift operators on them.

A functional is written ``phi = sum_n W_n(phi_n)`` with

    W_n(phi_n)(w) = lam**(-2n) sum_{k_1..k_n} phi_n(k_1..k_n) :w_hat(-k_1) ... w_hat(-k_n):

so ``W_1(f_hat) = w(f)``.  Kernels are symmetric and stored once per sorted
multiset of mode indices ("key").  The norm is the L2 norm under the energy
measure,

    ||phi||^2 = sum_n n! lam**(-2n) sum_{ordered k} prod |2 pi k_i|^2 |phi_n(k)|^2,

which per key is ``weight = n! lam**(-2n) multiplicity prod |2 pi k_i|^2``.

The drift ``G = G_plus + G_minus`` is the chaos form of ``-B_m(w) . D``, the
transport part of the Galerkin generator.  On symmetric kernels

    (G_plus phi)_N(k) = -(1/N) sum_{i<j} s(k_i, k_j) phi_{N-1}(k_i + k_j, rest)
    s(a, b) = (b . a_perp) (|b|^2 - |a|^2) / (|a|^2 |b|^2)

    (G_minus phi)_N(k) = (N + 1) (2 pi)^2 lam**-2 sum_i sum_{p+q=k_i} d(p, q) phi_{N+1}(p, q, rest)
    d(p, q) = (p . q_perp) (|p|^2 - |q|^2) / (2 |p + q|^2)

with ``a_perp = (a2, -a1)`` and every mode involved restricted to ``|.| <= m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp

from . import rng as _rng
from .torus import TWO_PI

BASIS_CAP = 10**7


def _multisets(prev, n_modes):
    """Extend sorted rows of ``prev`` by one index >= their last entry."""
    if prev.shape[1] == 0:
        return np.arange(n_modes, dtype=np.int64)[:, None]
    last = prev[:, -1]
    counts = n_modes - last
    rows = np.repeat(np.arange(len(prev)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    appended = last[rows] + (np.arange(len(rows)) - starts)
    return np.concatenate([prev[rows], appended[:, None]], axis=1)


def _multiset_count(n_modes, n):
    from math import comb

    return comb(n_modes + n - 1, n)


class ChaosBasis:
    """All sorted multisets of lattice modes with at most ``n_max`` elements.

    Keys are grouped by order and lexicographically sorted inside each order;
    ``levels[n]`` is the ``(count, n)`` array of mode indices.
    """

    def __init__(self, lattice, n_max, cap=BASIS_CAP):
        if n_max < 0:
            raise ValueError("n_max must be non-negative")
        total = sum(_multiset_count(lattice.size, n) for n in range(n_max + 1))
        if total > cap:
            raise ValueError(f"basis would have {total} keys, above the cap {cap}")
        if n_max and float(lattice.size) ** n_max >= 2.0**62:
            raise ValueError("too many modes to encode keys of this order")
        self.lattice = lattice
        self.n_max = int(n_max)
        levels = [np.zeros((1, 0), dtype=np.int64)]
        for _ in range(n_max):
            levels.append(_multisets(levels[-1], lattice.size))
        self.levels = levels
        self.offsets = np.cumsum([0] + [len(lv) for lv in levels])
        self.size = int(self.offsets[-1])
        self._codes = [self._encode(lv) for lv in levels]

    def _encode(self, rows):
        code = np.zeros(len(rows), dtype=np.int64)
        for col in range(rows.shape[1]):
            code = code * self.lattice.size + rows[:, col]
        return code

    def level_slice(self, n):
        return slice(self.offsets[n], self.offsets[n + 1])

    def lookup(self, n, rows):
        """Global index of each sorted row of mode indices at order ``n``; -1 if absent."""
        if n > self.n_max:
            return np.full(len(rows), -1, dtype=np.int64)
        codes = self._encode(rows)
        table = self._codes[n]
        pos = np.searchsorted(table, codes)
        pos = np.minimum(pos, len(table) - 1)
        found = table[pos] == codes
        return np.where(found, pos + self.offsets[n], -1)

    def index(self, integer_modes):
        """Global index of the key given as a list of integer mode vectors."""
        idx = self.lattice.index_of(np.asarray(integer_modes, dtype=np.int64).reshape(-1, 2))
        if np.any(idx < 0):
            raise KeyError(f"{integer_modes} contains a non-lattice mode")
        row = np.sort(idx)[None, :]
        out = int(self.lookup(len(idx), row)[0])
        if out < 0:
            raise KeyError(f"{integer_modes} is outside the basis")
        return out

    def key(self, index):
        n = int(np.searchsorted(self.offsets, index, side="right") - 1)
        return self.levels[n][index - self.offsets[n]]

    @cached_property
    def order(self):
        return np.repeat(np.arange(self.n_max + 1), np.diff(self.offsets))

    @cached_property
    def multiplicity(self):
        out = []
        for n, rows in enumerate(self.levels):
            mult = np.full(len(rows), float(factorial(n)))
            if n > 1:
                # runs of equal entries in sorted rows
                run = np.ones(len(rows))
                for col in range(1, n):
                    same = rows[:, col] == rows[:, col - 1]
                    run = np.where(same, run + 1, 1.0)
                    mult /= np.where(same, run, 1.0)
            out.append(mult)
        return np.concatenate(out)

    @cached_property
    def weight(self):
        """Per-key norm weight ``n! lam**(-2n) multiplicity prod |2 pi k|^2``."""
        sq = (TWO_PI * self.lattice.norms) ** 2 / self.lattice.lam**2
        out = []
        for n, rows in enumerate(self.levels):
            prod = np.prod(sq[rows], axis=1) if n else np.ones(1)
            out.append(factorial(n) * prod)
        return np.concatenate(out) * self.multiplicity

    def eigenvalue(self, theta):
        """``(2 pi)^(2 theta) sum |k_i|^(2 theta)``, minus the eigenvalue of the diagonal generator."""
        cache = self.__dict__.setdefault("_eig", {})
        if theta not in cache:
            mode = (TWO_PI * self.lattice.norms) ** (2.0 * theta)
            cache[theta] = np.concatenate(
                [np.sum(mode[rows], axis=1) if n else np.zeros(1) for n, rows in enumerate(self.levels)]
            )
        return cache[theta]

    def max_mode_norm(self):
        """Largest ``|k|`` in each key (0 for the constant)."""
        norms = self.lattice.norms
        return np.concatenate(
            [np.max(norms[rows], axis=1) if n else np.zeros(1) for n, rows in enumerate(self.levels)]
        )

    @cached_property
    def conjugate_index(self):
        """Index of the key with every mode negated."""
        out = []
        for n, rows in enumerate(self.levels):
            neg = np.sort(self.lattice.negative(rows), axis=1)
            out.append(self.lookup(n, neg))
        return np.concatenate(out)


def enumerate_basis(lattice, n_max, cap=BASIS_CAP):
    return ChaosBasis(lattice, n_max, cap)


@dataclass(eq=False)
class ChaosVector:
    basis: ChaosBasis
    coefficients: np.ndarray
    truncated: bool = field(default=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.complex128)
        if self.coefficients.shape != (self.basis.size,):
            raise ValueError("coefficient vector does not match the basis")

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.size, dtype=np.complex128))

    @classmethod
    def from_entries(cls, basis, entries):
        """``entries`` maps tuples of integer mode vectors to kernel values."""
        out = cls.zeros(basis)
        for modes, value in entries.items():
            idx = basis.index(list(modes)) if len(modes) else 0
            out.coefficients[idx] = value
        return out

    def _same(self, other):
        if other.basis is not self.basis:
            raise ValueError("vectors live on different bases")

    def __add__(self, other):
        self._same(other)
        return ChaosVector(self.basis, self.coefficients + other.coefficients, self.truncated or other.truncated)

    def __sub__(self, other):
        self._same(other)
        return ChaosVector(self.basis, self.coefficients - other.coefficients, self.truncated or other.truncated)

    def __neg__(self):
        return ChaosVector(self.basis, -self.coefficients, self.truncated)

    def scale(self, factor):
        return ChaosVector(self.basis, self.coefficients * factor, self.truncated)

    def component(self, n):
        out = np.zeros_like(self.coefficients)
        sl = self.basis.level_slice(n)
        out[sl] = self.coefficients[sl]
        return ChaosVector(self.basis, out)

    def top_order(self):
        nz = np.flatnonzero(self.coefficients)
        return int(self.basis.order[nz[-1]]) if len(nz) else 0

    def is_real(self, tol=1e-12):
        c = self.coefficients
        return np.allclose(c[self.basis.conjugate_index], np.conj(c), atol=tol * max(1.0, np.max(np.abs(c))))

    def copy(self):
        return ChaosVector(self.basis, self.coefficients.copy(), self.truncated)


def inner_product(phi, psi):
    phi._same(psi)
    return complex(np.sum(phi.basis.weight * np.conj(phi.coefficients) * psi.coefficients))


def norm(phi):
    return float(np.sqrt(np.sum(phi.basis.weight * np.abs(phi.coefficients) ** 2)))


def orthonormal_coordinates(phi):
    """Coordinates in which the chaos norm is the plain Euclidean norm."""
    return np.sqrt(phi.basis.weight) * phi.coefficients


def apply_resolvent_power(gamma, phi, theta):
    """Multiply by ``(1 - L_theta)^gamma``."""
    return ChaosVector(phi.basis, phi.coefficients * (1.0 + phi.basis.eigenvalue(theta)) ** gamma, phi.truncated)


def apply_diagonal_generator(phi, theta):
    """``L_theta phi``."""
    return ChaosVector(phi.basis, -phi.basis.eigenvalue(theta) * phi.coefficients, phi.truncated)


def random_vector(basis, seed, orders=None, real=True):
    """Random vector with every key contributing O(1) to the norm."""
    gen = _rng.stream(seed, _rng.RANDOM_VECTOR)
    values = _rng.complex_normal(gen, basis.size) / np.sqrt(basis.weight)
    if orders is not None:
        values[~np.isin(basis.order, list(orders))] = 0.0
    if real:
        values = 0.5 * (values + np.conj(values[basis.conjugate_index]))
    return ChaosVector(basis, values)


def _ragged_pairs(group_of_row, starts, counts):
    """Expand each row into its group's members: returns (row ids, member ids)."""
    c = counts[group_of_row]
    rows = np.repeat(np.arange(len(group_of_row)), c)
    first = np.repeat(np.cumsum(c) - c, c)
    members = np.repeat(starts[group_of_row], c) + (np.arange(len(rows)) - first)
    return rows, members


class DriftOperators:
    """Sparse matrices of ``G_plus`` and ``G_minus`` on a basis for cutoff ``m``.

    Matrices act on kernel coefficients; output orders above ``n_max`` are
    dropped.
    """

    def __init__(self, basis, m=None):
        lat = basis.lattice
        self.basis = basis
        self.m = float(lat.m if m is None else m)
        if self.m > lat.m * (1 + 1e-12):
            raise ValueError("drift cutoff exceeds the lattice cutoff")
        self._inside = lat.norms <= self.m * (1 + 1e-12)
        self.gplus = self._build_gplus()
        self.gminus = self._build_gminus()

    @cached_property
    def generator_drift(self):
        return (self.gplus + self.gminus).tocsr()

    def _build_gplus(self):
        basis, lat = self.basis, self.basis.lattice
        rows_all, cols_all, vals_all = [], [], []
        j = lat.integer_modes
        k = lat.modes
        for N in range(2, basis.n_max + 1):
            keys = basis.levels[N]
            for a in range(N):
                for b in range(a + 1, N):
                    ia, ib = keys[:, a], keys[:, b]
                    s = j[ia] + j[ib]
                    sidx = lat.index_of(s)
                    ok = (sidx >= 0) & self._inside[ia] & self._inside[ib]
                    ok &= np.where(sidx >= 0, self._inside[np.maximum(sidx, 0)], False)
                    ka, kb = k[ia], k[ib]
                    cross = kb[:, 0] * ka[:, 1] - kb[:, 1] * ka[:, 0]
                    ok &= cross != 0
                    if not ok.any():
                        continue
                    sel = np.flatnonzero(ok)
                    others = [c for c in range(N) if c not in (a, b)]
                    rest = np.concatenate([keys[sel][:, others], sidx[sel, None]], axis=1)
                    col = basis.lookup(N - 1, np.sort(rest, axis=1))
                    asq = np.sum(ka[sel] ** 2, axis=1)
                    bsq = np.sum(kb[sel] ** 2, axis=1)
                    val = -cross[sel] * (bsq - asq) / (asq * bsq) / N
                    rows_all.append(sel + basis.offsets[N])
                    cols_all.append(col)
                    vals_all.append(val)
        return self._assemble(rows_all, cols_all, vals_all)

    def _decompositions(self):
        """Ordered pairs ``p + q = a`` inside the cutoff, grouped by ``a``."""
        lat = self.basis.lattice
        inside = np.flatnonzero(self._inside)
        j, k = lat.integer_modes, lat.modes
        A, P, Q = [], [], []
        for a in inside:
            qvec = j[a] - j[inside]
            q = lat.index_of(qvec)
            ok = q >= 0
            ok &= np.where(ok, self._inside[np.maximum(q, 0)], False)
            A.append(np.full(ok.sum(), a))
            P.append(inside[ok])
            Q.append(q[ok])
        A, P, Q = (np.concatenate(x) if x else np.zeros(0, dtype=np.int64) for x in (A, P, Q))
        kp, kq, ka = k[P], k[Q], k[A]
        cross = kp[:, 0] * kq[:, 1] - kp[:, 1] * kq[:, 0]  # p . q_perp
        d = 0.5 * cross * (np.sum(kp**2, 1) - np.sum(kq**2, 1)) / np.sum(ka**2, 1)
        keep = d != 0
        A, P, Q, d = A[keep], P[keep], Q[keep], d[keep]
        counts = np.bincount(A, minlength=lat.size)
        starts = np.cumsum(counts) - counts
        return starts, counts, P, Q, d

    def _build_gminus(self):
        basis, lat = self.basis, self.basis.lattice
        starts, counts, P, Q, d = self._decompositions()
        rows_all, cols_all, vals_all = [], [], []
        for N in range(1, basis.n_max):
            keys = basis.levels[N]
            factor = (N + 1) * TWO_PI**2 / lat.lam**2
            for i in range(N):
                rid, mem = _ragged_pairs(keys[:, i], starts, counts)
                if len(rid) == 0:
                    continue
                others = [c for c in range(N) if c != i]
                rest = np.concatenate([keys[rid][:, others], P[mem, None], Q[mem, None]], axis=1)
                col = basis.lookup(N + 1, np.sort(rest, axis=1))
                rows_all.append(rid + basis.offsets[N])
                cols_all.append(col)
                vals_all.append(factor * d[mem])
        return self._assemble(rows_all, cols_all, vals_all)

    def _assemble(self, rows, cols, vals):
        size = self.basis.size
        if not rows:
            return sp.csr_matrix((size, size))
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        if np.any(c < 0):
            raise RuntimeError("drift operator references a key outside the basis")
        return sp.csr_matrix((v, (r, c)), shape=(size, size))


_OPERATOR_CACHE: dict = {}


def drift_operators(basis, m=None):
    m = float(basis.lattice.m if m is None else m)
    key = (id(basis), m)
    ops = _OPERATOR_CACHE.get(key)
    if ops is None or ops.basis is not basis:
        ops = DriftOperators(basis, m)
        _OPERATOR_CACHE[key] = ops
    return ops


def _overflow(phi):
    top = phi.basis.level_slice(phi.basis.n_max)
    return phi.truncated or bool(np.any(phi.coefficients[top] != 0))


def apply_gplus(m, phi):
    """``G_plus`` on ``phi``; the result is flagged truncated when order ``n_max`` input is dropped."""
    ops = drift_operators(phi.basis, m)
    return ChaosVector(phi.basis, ops.gplus @ phi.coefficients, _overflow(phi))


def apply_gminus(m, phi):
    ops = drift_operators(phi.basis, m)
    return ChaosVector(phi.basis, ops.gminus @ phi.coefficients, phi.truncated)


def apply_drift(m, phi):
    ops = drift_operators(phi.basis, m)
    return ChaosVector(phi.basis, ops.generator_drift @ phi.coefficients, _overflow(phi))


def apply_generator(m, phi, theta):
    """``(L_theta + G) phi`` on the truncated basis."""
    return apply_drift(m, phi) + apply_diagonal_generator(phi, theta)


def adjointness_defect(m, basis, trials=100, seed=0):
    """Largest ``|<psi, G_plus phi> + <G_minus psi, phi>| / (||psi|| ||phi||)`` over random pairs.

    ``phi`` is drawn on orders below ``n_max`` and ``psi`` on the order
    directly above, one pair per trial and chaos order.
    """
    if basis.n_max < 1:
        return 0.0
    ops = drift_operators(basis, m)
    worst = 0.0
    w = basis.weight
    for t in range(trials):
        n = 1 + t % basis.n_max  # psi order
        phi = random_vector(basis, seed * 100003 + 2 * t, orders=[n - 1], real=False)
        psi = random_vector(basis, seed * 100003 + 2 * t + 1, orders=[n], real=False)
        left = np.sum(w * np.conj(psi.coefficients) * (ops.gplus @ phi.coefficients))
        right = np.sum(w * np.conj(ops.gminus @ psi.coefficients) * phi.coefficients)
        scale = norm(phi) * norm(psi)
        if scale:
            worst = max(worst, abs(left + right) / scale)
    return worst


def chaos_vector_to_json(phi):
    """Nonzero entries as ``{lambda, m, n_max, entries: [{modes, re, im}]}`` with wavevectors ``j / lam``."""
    basis = phi.basis
    lat = basis.lattice
    entries = []
    for i in np.flatnonzero(phi.coefficients):
        modes = [[float(x) for x in lat.modes[j]] for j in basis.key(i)]
        c = phi.coefficients[i]
        entries.append({"modes": modes, "re": float(c.real), "im": float(c.imag)})
    return {"lambda": float(lat.lam), "m": float(lat.m), "n_max": basis.n_max, "entries": entries}


def chaos_vector_from_json(data, basis=None):
    """Inverse of :func:`chaos_vector_to_json`; builds the basis unless one is given."""
    from .torus import enumerate_lattice

    lam = float(data["lambda"])
    if basis is None:
        basis = enumerate_basis(enumerate_lattice(float(data["m"]), lam), int(data["n_max"]))
    elif abs(basis.lattice.lam - lam) > 1e-12:
        raise ValueError("the vector was written on a different lattice")
    out = ChaosVector.zeros(basis)
    for e in data["entries"]:
        ints = np.rint(np.asarray(e["modes"], dtype=float).reshape(-1, 2) * lam).astype(np.int64)
        idx = basis.index(ints) if len(ints) else 0
        out.coefficients[idx] += complex(e["re"], e["im"])
    return out
