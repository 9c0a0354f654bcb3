import math

import numpy as np
import pytest

from moderate_ips.diagnostics import (ConvergenceReport, StochasticConvolution, SweepConfig, convergence_sweep,
                                      entropy_trend, epsilon_schedule, fit_exponent, force_covariance_decay,
                                      iid_gaussian_oracle, mittag_leffler_half, mittag_leffler_series,
                                      reconstruction_exact, stochastic_convolution_estimate)
from moderate_ips.errors import InsufficientPoints, InvalidZeta, QuadratureTooCoarse
from moderate_ips.fields import GaussianDensity, GridField, GridSpec
from moderate_ips.kernels import biot_savart, build_regularized
from moderate_ips.mollifiers import Mollifier, ModerateScaling, moderate_potential
from moderate_ips.noise import build_noise, covariance_quadrature, nu_theoretical
from moderate_ips.particles import GridDrift, init_ensemble, simulate
from moderate_ips.pde import heat_propagate


# --- epsilon schedule -------------------------------------------------------

def test_schedule_example():
    assert epsilon_schedule(math.exp(8), math.exp(-20), 4, 2) == pytest.approx(0.5, rel=1e-12)


def test_schedule_monotone_and_branches():
    eps = [epsilon_schedule(N, 1e-9, 4, 2) for N in (4, 16, 256, 4096, 10 ** 6)]
    assert all(0 < e < math.inf for e in eps)
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    # zeta near 1 selects the -theta log zeta branch
    z = 0.99
    assert epsilon_schedule(10 ** 6, z, 4, 2) == pytest.approx((-math.log(z)) ** (-(4 / 3) / 4))
    assert epsilon_schedule(100, 0.5, 4, 2, theta=2.0) == pytest.approx((-2 * math.log(0.5)) ** (-1 / 3))


def test_schedule_errors():
    with pytest.raises(InvalidZeta):
        epsilon_schedule(100, 1.0, 4, 2)
    with pytest.raises(InvalidZeta):
        epsilon_schedule(100, 0.0, 4, 2)
    with pytest.raises(ValueError):
        epsilon_schedule(1, 0.5, 4, 2)
    with pytest.raises(ValueError):
        epsilon_schedule(100, 0.5, 4, 2, theta=0.0)


# --- Mittag-Leffler ---------------------------------------------------------

def test_mittag_leffler_values():
    assert mittag_leffler_half(0.0) == 1.0
    assert mittag_leffler_half(1.0) == pytest.approx(math.e * (1 + math.erf(1.0)), rel=1e-13)
    assert mittag_leffler_half(1.0) == pytest.approx(5.008980, abs=1e-6)
    with pytest.raises(ValueError):
        mittag_leffler_half(-1.0)


def test_mittag_leffler_bound_grid():
    for z in np.linspace(0, 5, 100):
        assert mittag_leffler_half(z) <= 2 * math.exp(z * z)


def test_mittag_leffler_series_agreement():
    # 60 terms are enough below z = 2.5; 120 terms cover [0, 3]
    for z in np.linspace(0, 2.5, 26):
        assert mittag_leffler_series(z) == pytest.approx(mittag_leffler_half(z), rel=1e-10)
    for z in np.linspace(0, 3, 31):
        assert mittag_leffler_series(z, terms=120) == pytest.approx(mittag_leffler_half(z), rel=1e-12)
    assert mittag_leffler_series(2.0, alpha=1.0) == pytest.approx(math.exp(2.0), rel=1e-14)


# --- entropy ----------------------------------------------------------------

def test_entropy_trend_heat_and_constant():
    g = GridSpec(2, 10.0, 128)
    f0 = GridField.from_function(g, GaussianDensity(2, (1.0, 0.6)).pdf)
    tr = entropy_trend([heat_propagate(f0, t, 0.4) for t in (0, 0.1, 0.3, 0.6)])
    assert tr.decreasing and tr.bounded and tr.initial == tr.values[0]
    c = GridField(g, np.full(g.shape, 1 / 400))
    tr = entropy_trend([c, c, c])
    assert len(set(tr.values)) == 1 and tr.bounded and not tr.decreasing
    assert not entropy_trend([c, f0], reference=-10.0).bounded


# --- stochastic convolution -------------------------------------------------

@pytest.fixture(scope="module")
def z_setup():
    grid = GridSpec(2, 6.0, 64)
    N = 256
    VN = moderate_potential(Mollifier(2), ModerateScaling(1 / 64, N))
    drift = GridDrift(build_regularized(biot_savart(), 0.6), VN, grid)
    ens = init_ensemble(N, GaussianDensity(2, (1.0, 0.6)), seed=3)
    return grid, VN, drift, ens


def test_z_starts_at_zero_and_reconstructs(z_setup):
    grid, VN, drift, ens = z_setup
    noise = build_noise(2, 4.0, math.log(ens.N), 64, seed=3, coupled=True)
    est = stochastic_convolution_estimate(ens, 0.005, 0.1, grid, VN, drift, noise, every=2, keep_fields=True,
                                          check=False)
    assert est.times[0] == 0.0 and len(est.times) == 11
    assert est.norms[0] < 1e-12
    assert reconstruction_exact(est)
    assert est.summary == max(est.norms) > 0


def test_reconstruction_needs_fields(z_setup):
    grid, VN, drift, ens = z_setup
    est = stochastic_convolution_estimate(ens, 0.01, 0.04, grid, VN, drift, every=1, check=False)
    with pytest.raises(ValueError):
        reconstruction_exact(est)


def test_zero_noise_z_is_discretization_error(z_setup):
    # noise free: Z is the time-stepping residual plus an O(h^2) deposit/spectral floor
    _, VN, _, ens = z_setup
    kern = build_regularized(biot_savart(), 0.6)
    fine = GridSpec(2, 6.0, 128)
    drift = GridDrift(kern, VN, fine)
    z = [stochastic_convolution_estimate(ens, dt, 0.2, fine, VN, drift, every=1, check=False).summary
         for dt in (0.04, 0.02, 0.01)]
    assert z[0] > z[1] > z[2]
    assert z[1] - z[2] < 0.5 * (z[0] - z[1])
    coarse = GridSpec(2, 6.0, 64)
    zc = stochastic_convolution_estimate(ens, 0.01, 0.2, coarse, VN, GridDrift(kern, VN, coarse), every=1,
                                         check=False).summary
    assert zc / z[2] > 3.0


def test_zero_kernel_zero_noise_z_vanishes(z_setup):
    grid, VN, _, ens = z_setup
    est = stochastic_convolution_estimate(ens, 0.01, 0.1, grid, VN, None, every=2, check=False)
    assert max(est.norms) < 1e-12


def test_quadrature_too_coarse(z_setup):
    grid, VN, drift, ens = z_setup
    with pytest.raises(QuadratureTooCoarse):
        stochastic_convolution_estimate(ens, 0.01, 0.1, grid, VN, drift, every=8)
    obs = StochasticConvolution(grid, VN, drift, 0.0, 0.05)
    simulate(ens, 0.05, 0.5, drift, observer=obs)
    with pytest.raises(QuadratureTooCoarse):
        obs.result(threshold=1e-6)
    assert obs.result(check=False).coarse_change > 0


def test_fit_exponent():
    Ns = [64, 256, 1024]
    assert fit_exponent(Ns, [3 * n ** -0.5 for n in Ns]) == pytest.approx(0.5)
    with pytest.raises(InsufficientPoints):
        fit_exponent([64], [1.0])


# --- force covariance -------------------------------------------------------

def test_iid_oracle_against_cartesian_quadrature():
    # Gauss-Hermite over z = X - Y ~ N(0, 2 sigma^2 I) with the full matrix Q
    sigma = 0.8
    # Q is only finitely smooth at 0, so Hermite converges algebraically: 300 nodes give ~1e-8
    x, w = np.polynomial.hermite_e.hermegauss(300)
    s = math.sqrt(2) * sigma
    Z = np.stack(np.meshgrid(s * x, s * x, indexing="ij"), -1).reshape(-1, 2)
    W = (np.outer(w, w) / (2 * math.pi)).ravel()
    Q = covariance_quadrature(2, 4.0, 0.0, Z)
    val = np.sum(W * np.sum(Q ** 2, axis=(1, 2)))
    assert iid_gaussian_oracle(2, 4.0, 0.0, sigma, 2.0) == pytest.approx(val, rel=1e-7)


def test_force_covariance_same_particle_exact():
    out = force_covariance_decay(2, 4.0, [0.0, 1.0], replicas=4, N=4, T=0.02, dt=0.01, tagged=(1, 1))
    nu = nu_theoretical(2, 4.0)
    assert out.oracle == pytest.approx((2 * nu * math.sqrt(2)) ** 2, rel=1e-14)
    for m in out.means:
        assert m == pytest.approx(out.oracle, rel=1e-10)


def test_force_covariance_bounded_and_decreasing():
    out = force_covariance_decay(2, 4.0, [0.0, 1.0, 2.0], replicas=32, N=8, T=0.05, dt=0.01)
    q0 = (2 * nu_theoretical(2, 4.0) * math.sqrt(2)) ** 2
    assert all(0 < m <= q0 for m in out.means)
    assert out.means[0] > out.means[1] > out.means[2]
    assert abs(out.baseline - out.oracle) < 4 * out.baseline_stderr


def test_force_covariance_errors():
    with pytest.raises(ValueError):
        force_covariance_decay(2, 4.0, [0.0], ell=1.0)
    with pytest.raises(InsufficientPoints):
        force_covariance_decay(2, 4.0, [0.0], replicas=1)
    with pytest.raises(ValueError):
        force_covariance_decay(2, 4.0, [0.0], N=4, tagged=(0, 7))


# --- convergence sweep ------------------------------------------------------

SMALL = dict(T=0.05, dt=0.01, snapshot_every=0.025, grid=GridSpec(2, 6.0, 64), M=64)


def test_sweep_single_replica_degenerate():
    rep = convergence_sweep(SweepConfig(Ns=(64,), replicas=1, epsilon=0.6, **SMALL))
    assert isinstance(rep, ConvergenceReport)
    assert len(rep.rows) == 1 and len(rep.replica_rows) == 1
    row = rep.rows[0]
    assert row.iqr == 0.0 and row.iqr_eps == 0.0 and row.replicas == 1
    assert row.median > 0 and math.isnan(rep.fitted_exponent)


def test_sweep_zero_kernel_no_noise_decreases():
    cfg = SweepConfig(Ns=(64, 1024), replicas=8, kernel=None, noise=False, epsilon=1.0,
                      omega0=GaussianDensity(2, 1.0), **SMALL)
    rep = convergence_sweep(cfg)
    assert [r.N for r in rep.rows] == [64, 1024]
    assert rep.rows[1].median < rep.rows[0].median
    assert rep.fitted_exponent > 0
    assert all(r.error == "" for r in rep.replica_rows)


def test_sweep_schedule_and_threads_agree():
    cfg = SweepConfig(Ns=(64, 256), replicas=2, zeta_replicas=32, **SMALL)
    a = convergence_sweep(cfg)
    b = convergence_sweep(SweepConfig(Ns=(64, 256), replicas=2, zeta_replicas=32, threads=2, **SMALL))
    assert a.rows[0].epsilon > a.rows[1].epsilon > 0
    assert [r.distance for r in a.replica_rows] == [r.distance for r in b.replica_rows]


def test_sweep_records_replica_errors():
    # a box of half-width 2 loses mass for a unit Gaussian: every replica fails, the sweep still returns
    cfg = SweepConfig(Ns=(64,), replicas=2, epsilon=0.6, kernel=None, noise=False, T=0.05, dt=0.01,
                      snapshot_every=0.05, grid=GridSpec(2, 2.0, 32), pde_pad=4)
    rep = convergence_sweep(cfg)
    assert rep.rows == ()
    assert len(rep.replica_rows) == 2
    assert all(r.error.startswith("MassLeak") and math.isnan(r.distance) for r in rep.replica_rows)
