import numpy as np
import pytest

from oracles import chaos_to_polynomial, evaluate_polynomial, ito_generator
from vfx import fock, sde, torus, wick
from vfx.cylinder import CylinderFunction
from vfx.sde import SdeConfig


def test_config_validation():
    with pytest.raises(ValueError):
        SdeConfig(theta=1.0)
    with pytest.raises(ValueError):
        SdeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SdeConfig(n_paths=0)
    assert SdeConfig(dt=1e-3, t_final=0.1).n_steps == 100


def test_worker_count_does_not_change_paths():
    cfg = SdeConfig(m=3.0, dt=1e-3, t_final=0.02, n_paths=sde.CHUNK_PATHS + 7, seed=4)
    a = sde.simulate(cfg, record_times=[0.02], workers=1)
    b = sde.simulate(cfg, record_times=[0.02], workers=3)
    assert np.array_equal(a.fields, b.fields)


def test_path_streams_do_not_depend_on_ensemble_size():
    small = sde.simulate(SdeConfig(m=3.0, t_final=0.01, n_paths=3, seed=1), record_times=[0.01])
    large = sde.simulate(SdeConfig(m=3.0, t_final=0.01, n_paths=20, seed=1), record_times=[0.01])
    assert np.array_equal(small.fields, large.fields[:3])


def test_linear_equation_variance_from_zero_start():
    cfg = SdeConfig(m=3.0, dt=1e-3, t_final=0.004, n_paths=20_000, nonlinear=False, seed=2)
    lat = cfg.lattice()
    diag = sde.simulate(cfg, torus.SpectralField.zeros(lat), record_times=[cfg.t_final])
    est = np.mean(np.abs(diag.fields[:, 0, :]) ** 2, axis=0)
    target = sde.ou_variance(lat, cfg.theta, cfg.t_final)
    # exact Gaussian transition: |c|^2 is exponential with mean target
    assert np.max(np.abs(est / target - 1)) < 5 / np.sqrt(cfg.n_paths)


def test_short_invariance_run_passes():
    cfg = SdeConfig(m=3.0, dt=1e-3, t_final=0.2, n_paths=2000, seed=7)
    lat = cfg.lattice()
    f = torus.indicator_field(lat, [(1, 0)])
    g = torus.indicator_field(lat, [(1, 1)])
    rep = sde.invariance_test(cfg, [(f, f), (f, g)], threshold=5.0)
    assert rep["pass"], rep["statistics"]
    assert len(rep["covariance_rows"]) == 2 * 3


def test_cylinder_generator_matches_ito_formula_on_polynomials():
    lat = torus.enumerate_lattice(2.0)
    basis = fock.enumerate_basis(lat, 2)
    f = torus.indicator_field(lat, [(1, 1)], value=0.7 + 0.2j)
    phi = wick.first_chaos(basis, f)
    poly = chaos_to_polynomial(basis, phi.coefficients)
    w = torus.sample_energy_measure(lat, 3, size=5)
    reference = evaluate_polynomial(ito_generator(lat, poly, 1.5, 2.0), w.full())
    ours = CylinderFunction.linear(f).generator(w, 1.5, 2.0)
    np.testing.assert_allclose(ours, reference.real, rtol=1e-10, atol=1e-10 * np.max(np.abs(reference)))


def test_cylinder_generator_agrees_with_chaos_generator():
    lat = torus.enumerate_lattice(3.0)
    basis = fock.enumerate_basis(lat, 2)
    f = torus.indicator_field(lat, [(2, 1), (1, 0)])
    w = torus.sample_energy_measure(lat, 12, size=4)
    chaos = wick.evaluate_chaos(fock.apply_generator(3.0, wick.first_chaos(basis, f), 1.5), w)
    cyl = CylinderFunction.linear(f).generator(w, 1.5, 3.0)
    np.testing.assert_allclose(cyl, chaos.real, rtol=1e-9)


def test_martingale_diagnostics_on_linear_observable():
    cfg = SdeConfig(m=3.0, dt=1e-5, t_final=0.005, n_paths=400, seed=5)
    lat = cfg.lattice()
    phi = CylinderFunction.linear(torus.indicator_field(lat, [(1, 0)]))
    diag = sde.simulate(cfg, observers={"cylinder": sde.CylinderObserver(phi, cfg.theta, cfg.m)})
    rep = sde.martingale_diagnostics(diag)
    assert rep["pass"], rep["statistics"]


def test_constant_functional_integrates_to_time():
    # harness self-test: the integral of 1 is t, so the sup-square scales like T^2
    cfg = SdeConfig(m=2.0, dt=1e-3, t_final=0.4, n_paths=4, seed=0)
    phi = CylinderFunction.constant(torus.indicator_field(cfg.lattice(), [(1, 0)]))
    rep = sde.additive_functional_scaling(cfg, phi, horizons=[0.05, 0.1, 0.2, 0.4])
    assert rep["statistics"]["slope"] == pytest.approx(2.0, abs=1e-9)


def test_first_chaos_functional_scales_diffusively():
    cfg = SdeConfig(m=3.0, dt=1e-3, t_final=1.0, n_paths=300, seed=3)
    phi = CylinderFunction.linear(torus.indicator_field(cfg.lattice(), [(1, 0)]))
    rep = sde.additive_functional_scaling(cfg, phi)
    assert 0.8 <= rep["statistics"]["slope"] <= 1.3


def test_step_matches_batched_integrator_shape():
    cfg = SdeConfig(m=2.0, dt=1e-3)
    lat = cfg.lattice()
    w = torus.sample_energy_measure(lat, 0, size=3)
    out = sde.step(w, cfg, noise_key=1)
    assert out.coefficients.shape == w.coefficients.shape
    assert np.all(np.isfinite(out.coefficients))


def test_blowup_is_flagged_not_raised():
    cfg = SdeConfig(theta=1.1, m=3.0, dt=1e-2, t_final=1.0, n_paths=3, noise=False, seed=0)
    lat = cfg.lattice()
    big = torus.sample_energy_measure(lat, 0).scale(1e3)
    with pytest.warns(RuntimeWarning, match="blew up"):
        diag = sde.simulate(cfg, big, record_times=[cfg.t_final])
    assert diag.blowups == 3
