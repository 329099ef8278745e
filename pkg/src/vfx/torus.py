"""Fourier lattices, real spectral fields and the truncated Euler nonlinearity.

Conventions.  A lattice of scale ``lam`` carries the modes ``k = j / lam``
with ``j`` a nonzero integer vector and ``|k| <= m``; it is the dual of the
torus of side ``lam``.  A field ``w`` is stored through its Fourier
coefficients ``w_hat(k) = int exp(-2 pi i k.x) w(x) dx`` and reconstructed as
``w(x) = lam**-2 sum_k w_hat(k) exp(2 pi i k.x)``.  With ``lam = 1`` these
are the usual formulas on the unit torus.

Modes are sorted lexicographically on the integer vectors ``j``.  This order
is reversed by ``k -> -k``, so the mode at position ``i`` has its negative at
``M - 1 - i``, and the upper half of the list holds one representative of
each conjugate pair (the canonical modes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import rng as _rng

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class Lattice:
    lam: float
    m: float
    integer_modes: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.integer_modes)

    @property
    def n_canonical(self):
        return self.size // 2

    @cached_property
    def modes(self):
        """Physical wave vectors, shape (M, 2)."""
        return self.integer_modes / self.lam

    @cached_property
    def norms(self):
        return np.hypot(self.modes[:, 0], self.modes[:, 1])

    @cached_property
    def canonical_modes(self):
        return self.modes[self.n_canonical:]

    @cached_property
    def canonical_integer_modes(self):
        return self.integer_modes[self.n_canonical:]

    @cached_property
    def canonical_norms(self):
        return self.norms[self.n_canonical:]

    def negative(self, index):
        return self.size - 1 - np.asarray(index)

    @cached_property
    def _lookup(self):
        radius = int(np.max(np.abs(self.integer_modes))) if self.size else 0
        width = 4 * radius + 1
        table = np.full((width, width), -1, dtype=np.int64)
        shifted = self.integer_modes + 2 * radius
        table[shifted[:, 0], shifted[:, 1]] = np.arange(self.size)
        return radius, table

    def index_of(self, integer_vectors):
        """Mode index of each integer vector, -1 where the vector is not a mode.

        Accepts vectors with entries up to twice the lattice radius, which
        covers sums of two modes.
        """
        radius, table = self._lookup
        vec = np.asarray(integer_vectors, dtype=np.int64)
        shifted = vec + 2 * radius
        inside = np.all((shifted >= 0) & (shifted < table.shape[0]), axis=-1)
        out = np.full(vec.shape[:-1], -1, dtype=np.int64)
        s = shifted[inside]
        out[inside] = table[s[..., 0], s[..., 1]]
        return out

    def within(self, integer_vectors, cutoff):
        """True where the integer vectors lie in the disc of radius ``cutoff``."""
        vec = np.asarray(integer_vectors, dtype=np.float64)
        bound = (cutoff * self.lam) ** 2 * (1 + 1e-12)
        return np.sum(vec**2, axis=-1) <= bound

    def compatible(self, other):
        return self.lam == other.lam and self.m == other.m


def enumerate_lattice(m, lam=1.0):
    """All nonzero ``k`` in ``lam**-1 Z^2`` with ``|k| <= m``, lexicographically ordered."""
    if lam <= 0:
        raise ValueError("lattice scale must be positive")
    if m * lam < 1:
        raise ValueError(f"no lattice mode with |k| <= {m} at scale {lam}")
    r = int(np.floor(m * lam + 1e-9))
    j1, j2 = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    cand = np.stack([j1.ravel(), j2.ravel()], axis=1)
    keep = (np.sum(cand.astype(float) ** 2, axis=1) <= (m * lam) ** 2 * (1 + 1e-12)) & np.any(cand != 0, axis=1)
    # meshgrid with ij indexing already yields lexicographic order
    return Lattice(float(lam), float(m), cand[keep].astype(np.int64))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real mean-zero field stored on canonical modes.

    ``coefficients`` has the canonical modes on its last axis; leading axes
    index an ensemble of independent fields.
    """

    lattice: Lattice
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.complex128)
        if coeffs.shape[-1] != self.lattice.n_canonical:
            raise ValueError("coefficient count does not match the canonical modes")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def zeros(cls, lattice, batch=()):
        return cls(lattice, np.zeros((*batch, lattice.n_canonical), dtype=np.complex128))

    @classmethod
    def from_modes(cls, lattice, values):
        """Build from ``{(jx, jy): value}`` with integer coordinates ``k * lam``.

        Non-canonical entries are conjugated onto their partner.
        """
        coeffs = np.zeros(lattice.n_canonical, dtype=np.complex128)
        for j, value in values.items():
            idx = int(lattice.index_of(np.array(j)))
            if idx < 0:
                raise KeyError(f"{j} is not a lattice mode")
            if idx < lattice.n_canonical:
                coeffs[lattice.negative(idx) - lattice.n_canonical] = np.conj(value)
            else:
                coeffs[idx - lattice.n_canonical] = value
        return cls(lattice, coeffs)

    def full(self):
        """Coefficients on every mode, Hermitian partners filled in."""
        return full_coefficients(self.coefficients)

    def __getitem__(self, j):
        idx = int(self.lattice.index_of(np.array(j)))
        if idx < 0:
            raise KeyError(j)
        return self.full()[..., idx]

    def __add__(self, other):
        return SpectralField(self.lattice, self.coefficients + other.coefficients)

    def __sub__(self, other):
        return SpectralField(self.lattice, self.coefficients - other.coefficients)

    def scale(self, factor):
        return SpectralField(self.lattice, self.coefficients * factor)

    def multiplier(self, values):
        """Apply a real Fourier multiplier given per canonical mode."""
        return SpectralField(self.lattice, self.coefficients * values)

    def project(self, cutoff):
        keep = self.lattice.canonical_norms <= cutoff * (1 + 1e-12)
        return SpectralField(self.lattice, np.where(keep, self.coefficients, 0.0))

    def evaluate(self, points):
        """Real-space values at points of shape (P, 2); the imaginary part is returned too."""
        phase = np.exp(2j * np.pi * (np.asarray(points) @ self.lattice.modes.T))
        return (phase @ self.full().T).T / self.lattice.lam**2


def full_coefficients(canonical):
    return np.concatenate([np.conj(canonical[..., ::-1]), canonical], axis=-1)


@dataclass(frozen=True, eq=False)
class VelocityField:
    lattice: Lattice
    u1: np.ndarray
    u2: np.ndarray

    def divergence_symbol(self):
        """``k . u_hat(k)`` per canonical mode; identically zero for Biot-Savart output."""
        k = self.lattice.canonical_modes
        return k[:, 0] * self.u1 + k[:, 1] * self.u2


def biot_savart_symbol(modes):
    """``K_hat(k) = -2 pi i k_perp / |2 pi k|^2`` with ``k_perp = (k2, -k1)``; shape (..., 2)."""
    modes = np.asarray(modes, dtype=float)
    perp = np.stack([modes[..., 1], -modes[..., 0]], axis=-1)
    sq = np.sum(modes**2, axis=-1, keepdims=True)
    return -2j * np.pi * perp / (TWO_PI**2 * sq)


def biot_savart(field_):
    symbol = biot_savart_symbol(field_.lattice.canonical_modes)
    c = field_.coefficients
    return VelocityField(field_.lattice, c * symbol[:, 0], c * symbol[:, 1])


class TriadTable:
    """Interaction coefficients of the truncated nonlinearity.

    For every canonical output mode ``k`` and unordered pair ``{p, q}`` with
    ``p + q = k`` and ``|p|, |q|, |k| <= m`` the table stores
    ``lam**-2 (c(p, q) + c(q, p))`` with ``c(p, q) = (q . p_perp) / |p|^2``,
    so that ``B_hat(k) = sum coef * w_hat(p) w_hat(q)``.
    """

    def __init__(self, lattice, m):
        if m > lattice.m * (1 + 1e-12):
            raise ValueError("nonlinearity cutoff exceeds the lattice cutoff")
        self.lattice = lattice
        self.m = float(m)
        M = lattice.size
        half = lattice.n_canonical
        inside = np.flatnonzero(lattice.norms <= m * (1 + 1e-12))
        outputs = inside[inside >= half]
        j = lattice.integer_modes
        ks, ps, qs = [], [], []
        for k in outputs:
            p = inside
            qvec = j[k] - j[p]
            q = lattice.index_of(qvec)
            ok = (q >= 0) & lattice.within(qvec, m)
            ok &= p <= np.where(q >= 0, q, M)  # unordered pairs, p <= q
            ks.append(np.full(ok.sum(), k - half))
            ps.append(p[ok])
            qs.append(q[ok])
        self.k = np.concatenate(ks) if ks else np.zeros(0, dtype=np.int64)
        self.p = np.concatenate(ps) if ps else np.zeros(0, dtype=np.int64)
        self.q = np.concatenate(qs) if qs else np.zeros(0, dtype=np.int64)
        pv, qv = lattice.modes[self.p], lattice.modes[self.q]
        cross = qv[:, 0] * pv[:, 1] - qv[:, 1] * pv[:, 0]  # q . p_perp
        psq, qsq = np.sum(pv**2, axis=1), np.sum(qv**2, axis=1)
        coef = cross / psq - cross / qsq
        coef[self.p == self.q] *= 0.5
        self.coef = coef / lattice.lam**2
        self._gather = sp.csr_matrix(
            (self.coef, (np.arange(len(self.k)), self.k)), shape=(len(self.k), half)
        )

    def __len__(self):
        return len(self.k)

    def apply(self, canonical):
        """Nonlinearity on a batch of canonical coefficient arrays, shape (..., M/2)."""
        full = full_coefficients(canonical)
        lead = full.shape[:-1]
        flat = full.reshape(-1, full.shape[-1])
        products = flat[:, self.p] * flat[:, self.q]
        out = (self._gather.T @ products.T).T
        return np.asarray(out).reshape(*lead, self.lattice.n_canonical)


_TRIAD_CACHE: dict = {}


def triad_table(lattice, m):
    key = (id(lattice), float(m))
    table = _TRIAD_CACHE.get(key)
    if table is None or table.lattice is not lattice:
        table = TriadTable(lattice, m)
        _TRIAD_CACHE[key] = table
    return table


def galerkin_nonlinearity(field_, m=None):
    """``div P_m((K * P_m w) P_m w)`` by exact convolution over the retained modes."""
    m = field_.lattice.m if m is None else m
    table = triad_table(field_.lattice, m)
    return SpectralField(field_.lattice, table.apply(field_.coefficients))


def _check_pair(a, b):
    if not a.compatible(b):
        raise ValueError("fields live on different lattices")


def pair_field(w, f):
    """Duality ``w(f) = lam**-2 sum_k conj(f_hat(k)) w_hat(k)`` over all modes."""
    _check_pair(w.lattice, f.lattice)
    s = np.sum(np.conj(f.coefficients) * w.coefficients, axis=-1)
    return 2.0 * s.real / w.lattice.lam**2


def weighted_inner(f, g, weights):
    """``lam**-2 sum_k weight(k) conj(f_hat) g_hat`` over all modes, weights per canonical mode."""
    _check_pair(f.lattice, g.lattice)
    s = np.sum(weights * np.conj(f.coefficients) * g.coefficients, axis=-1)
    return 2.0 * s.real / f.lattice.lam**2


def h1_inner(f, g):
    """Covariance of the energy measure, ``<A^(1/2) f, A^(1/2) g>``."""
    return weighted_inner(f, g, (TWO_PI * f.lattice.canonical_norms) ** 2)


def sobolev_norm(f, s):
    """``(lam**-2 sum_k |k|^(2s) |f_hat(k)|^2)^(1/2)``."""
    w = f.lattice.canonical_norms ** (2.0 * s)
    return np.sqrt(weighted_inner(f, f, w))


def laplacian_norm(f, s):
    """``||A^(s/2) f||`` with ``A = -Laplacian``, i.e. weights ``|2 pi k|^(2s)``."""
    w = (TWO_PI * f.lattice.canonical_norms) ** (2.0 * s)
    return np.sqrt(weighted_inner(f, f, w))


def mode_variance(lattice):
    """Stationary ``E|w_hat(k)|^2`` per canonical mode under the energy measure."""
    return lattice.lam**2 * (TWO_PI * lattice.canonical_norms) ** 2


def sample_energy_measure(lattice, seed, size=None):
    """Draw from the Gaussian energy measure.

    Each canonical mode has its own counter-based stream keyed by
    ``(seed, mode index)``, so a mode's values do not depend on the others.
    With ``size`` an ensemble of that many independent fields is returned.
    """
    n = 1 if size is None else int(size)
    std = np.sqrt(mode_variance(lattice))
    coeffs = np.empty((n, lattice.n_canonical), dtype=np.complex128)
    for i in range(lattice.n_canonical):
        coeffs[:, i] = std[i] * _rng.complex_normal(_rng.stream(seed, _rng.MEASURE, i), n)
    return SpectralField(lattice, coeffs[0] if size is None else coeffs)


def indicator_field(lattice, modes, value=1.0):
    """Test function with coefficient ``value`` on the given integer modes and their negatives."""
    return SpectralField.from_modes(lattice, {tuple(j): value for j in modes})


_MAGIC = b"VFLD"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIddQ")
_RECORD = np.dtype([("jx", "<i4"), ("jy", "<i4"), ("re", "<f8"), ("im", "<f8")])


def write_snapshot(path, field_):
    lat = field_.lattice
    if field_.coefficients.ndim != 1:
        raise ValueError("snapshots hold a single field")
    rec = np.empty(lat.n_canonical, dtype=_RECORD)
    rec["jx"], rec["jy"] = lat.canonical_integer_modes.T
    rec["re"], rec["im"] = field_.coefficients.real, field_.coefficients.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _FORMAT_VERSION, lat.lam, lat.m, lat.n_canonical))
        fh.write(rec.tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, lam, m, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=_HEADER.size)
    lattice = enumerate_lattice(m, lam)
    if count != lattice.n_canonical or not np.array_equal(
        np.stack([rec["jx"], rec["jy"]], axis=1), lattice.canonical_integer_modes
    ):
        raise ValueError(f"{path}: mode table does not match the lattice")
    return SpectralField(lattice, rec["re"] + 1j * rec["im"])
