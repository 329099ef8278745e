import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from vfx import fock, opnorm
from vfx.opnorm import OperatorSpec, Weight
from vfx.torus import enumerate_lattice


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 30), st.integers(2, 30))
def test_power_iteration_matches_dense_svd(seed, rows, cols):
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((rows, cols)) + 1j * gen.standard_normal((rows, cols))
    est = opnorm.largest_singular_value(sp.csr_matrix(a), tol=1e-12, max_iter=100_000)
    top = np.linalg.svd(a, compute_uv=False)
    # power iteration converges in the singular value itself, not to the gap
    assert est.value == pytest.approx(top[0], rel=1e-4)


def test_zero_operator_has_zero_norm():
    est = opnorm.largest_singular_value(sp.csr_matrix((4, 3)))
    assert est.value == 0.0 and est.converged


def test_weights():
    assert Weight("power", 2.0)(np.array([0, 1, -1])).tolist() == [1.0, 4.0, 0.0]
    assert Weight("geometric", 2.0)(3) == 8.0
    assert Weight("table", (1.0, 2.0))(5) == 2.0
    assert Weight("power", 1.0).doubling_constant() == 2.0
    with pytest.raises(ValueError):
        Weight("geometric", 0.5)
    with pytest.raises(ValueError):
        Weight("table", (2.0, 1.0))
    with pytest.raises(ValueError):
        Weight("other", 1.0)


def test_identity_composite_is_the_weight_ratio():
    basis = fock.enumerate_basis(enumerate_lattice(2.0), 2)
    spec = OperatorSpec(left_weight=Weight("power", 1.0), right_weight=Weight.one())
    assert opnorm.operator_norm(spec, basis, tol=1e-12).value == pytest.approx(3.0)


def test_resolvent_powers_cancel_on_identity():
    basis = fock.enumerate_basis(enumerate_lattice(2.0), 2)
    spec = OperatorSpec(left_power=0.5, right_power=0.5)
    assert opnorm.operator_norm(spec, basis, tol=1e-12).value == pytest.approx(1.0)


def test_drift_norm_against_dense_weighted_matrix():
    basis = fock.enumerate_basis(enumerate_lattice(1.0, 2.0), 2)
    spec = OperatorSpec("drift", 1.5, None, Weight.one(), -0.5, Weight.one(), 0, 0.0, 1.0, 0.5)
    drift = fock.drift_operators(basis).generator_drift.toarray()
    res = 1 + basis.eigenvalue(1.5)
    root = np.sqrt(basis.weight)
    dense = np.diag(root * res**-0.5) @ drift @ np.diag(res**-0.5 / root)
    est = opnorm.operator_norm(spec, basis, tol=1e-12, max_iter=100_000)
    assert est.value == pytest.approx(np.linalg.norm(dense, 2), rel=1e-4)


def test_spec_rejects_unknown_core_and_nonfinite_powers():
    with pytest.raises(ValueError):
        OperatorSpec("sideways")
    with pytest.raises(ValueError):
        OperatorSpec(left_power=np.inf)


def test_vanishing_right_weight_must_be_annihilated():
    basis = fock.enumerate_basis(enumerate_lattice(2.0), 2)
    # shift -2 also zeroes the weight on order 1, which G_plus raises
    spec = OperatorSpec("gplus", right_shift=-2)
    with pytest.raises(ValueError, match="vanishes"):
        opnorm.composite_matrix(spec, basis)
    # the constant is annihilated by both parts
    opnorm.composite_matrix(OperatorSpec("gplus", right_shift=-1), basis)
    opnorm.composite_matrix(OperatorSpec("gminus", right_shift=-1), basis)


def test_apply_weight_scales_by_order():
    basis = fock.enumerate_basis(enumerate_lattice(1.0), 2)
    phi = fock.random_vector(basis, 0)
    out = opnorm.apply_weight(Weight("power", 1.0), phi)
    np.testing.assert_allclose(out.coefficients, phi.coefficients * (1 + basis.order))
