import numpy as np
import pytest

from vfx import continuum, fock
from vfx.torus import enumerate_lattice


@pytest.mark.parametrize("lam, m", [(1.0, 4.0), (2.0, 2.5)])
def test_lattice_sum_matches_the_chaos_lowering_operator(lam, m):
    lat = enumerate_lattice(m, lam)
    basis = fock.enumerate_basis(lat, 2)
    rows = basis.levels[2]
    c = np.zeros(basis.size, dtype=complex)
    c[basis.level_slice(2)] = continuum.anisotropic_kernel(lat.modes[rows[:, 0]], lat.modes[rows[:, 1]])
    ours = fock.drift_operators(basis).gminus @ c
    ref = continuum.lower_kernel(continuum.anisotropic_kernel, lam, m, lat.modes)
    np.testing.assert_allclose(ours[basis.level_slice(1)], ref, atol=1e-12 * np.abs(ref).max())


def test_radial_kernels_cancel_on_symmetry_axes():
    # reflecting p across the line through k flips the cross product and keeps
    # both norms; the lattice is invariant under that reflection along axes and diagonals
    def radial(p, q):
        return np.exp(-np.sum(p**2, -1) - np.sum(q**2, -1))

    outputs = np.array([[0.5, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.5, 1.5]])
    out = continuum.lower_kernel(radial, 2.0, 3.0, outputs)
    assert np.max(np.abs(out)) < 1e-14
    off_axis = continuum.lower_kernel(radial, 2.0, 3.0, np.array([[1.0, 0.5]]))
    assert abs(off_axis[0]) > 1e-6


def test_smooth_cutoff_weight():
    x = np.array([0.0, 3.0, 10.0])
    assert continuum.cutoff_weight(x, 3.0).tolist() == [1.0, 1.0, 0.0]
    smooth = continuum.cutoff_weight(x, 3.0, width=0.5)
    assert smooth[0] == pytest.approx(1.0) and smooth[1] == pytest.approx(0.5) and smooth[2] == pytest.approx(0.0)


def test_gaps_shrink_geometrically():
    rep = continuum.lambda_continuum_gap()
    assert rep["passed"]
    assert all(r >= 1.5 for r in rep["ratios"])
    assert rep["extrapolation_gap"] < rep["gaps"][-1]


def test_non_nested_scales_are_rejected():
    with pytest.raises(ValueError):
        continuum.lambda_continuum_gap(lams=(2, 3))
