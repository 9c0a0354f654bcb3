import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from moderate_ips.errors import DimensionMismatch, InsufficientPoints, InvalidExponents, ZeroPoint
from moderate_ips.kernels import (KernelKind, biot_savart, build_regularized, check_exponent, eval_kernel,
                                  repulsive_poisson, riesz_gradient, sup_norm_bound_check)
from moderate_ips.mollifiers import Mollifier

KINDS = [biot_savart(), repulsive_poisson(2), repulsive_poisson(3), riesz_gradient(3, 0.0),
         riesz_gradient(3, 0.5), riesz_gradient(3, 1.0)]


def test_biot_savart_value():
    np.testing.assert_allclose(eval_kernel(biot_savart(), [1.0, 0.0]), [0.0, 1 / (2 * math.pi)], atol=1e-15)


def test_repulsive_poisson_value():
    K = repulsive_poisson(2, 1 / (2 * math.pi))
    np.testing.assert_allclose(eval_kernel(K, [0.0, 2.0]), [0.0, 1 / (4 * math.pi)], atol=1e-15)


def test_default_poisson_constant():
    assert repulsive_poisson(2).c_d == pytest.approx(1 / (2 * math.pi))
    assert repulsive_poisson(3).c_d == pytest.approx(1 / (4 * math.pi))


def test_riesz_closed_forms():
    x = np.array([0.3, -0.4, 1.2])
    r = np.linalg.norm(x)
    np.testing.assert_allclose(eval_kernel(riesz_gradient(3, 0.5), x), 0.5 * x * r ** -2.5, rtol=1e-14)
    np.testing.assert_allclose(eval_kernel(riesz_gradient(3, 0.0), x), x / r ** 2, rtol=1e-14)


def test_biot_savart_tangential():
    x = np.random.default_rng(1).normal(size=(50, 2))
    assert np.max(np.abs(np.sum(eval_kernel(biot_savart(), x) * x, axis=1))) < 1e-15


def test_errors():
    with pytest.raises(ZeroPoint):
        eval_kernel(biot_savart(), [0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        eval_kernel(biot_savart(), [1.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        KernelKind("biot_savart", 3)
    with pytest.raises(ValueError):
        riesz_gradient(3, 1.5)
    with pytest.raises(ValueError):
        repulsive_poisson(2, -1.0)
    with pytest.raises(ValueError):
        build_regularized(biot_savart(), 0.0)
    with pytest.raises(ValueError):
        build_regularized(biot_savart(), 0.1, table_resolution=32)


def test_exponent_checks():
    check_exponent(biot_savart(), 2.5)
    with pytest.raises(InvalidExponents):
        check_exponent(biot_savart(), 2.0)
    with pytest.raises(InvalidExponents):
        check_exponent(repulsive_poisson(3), 2.5)
    with pytest.raises(InvalidExponents):
        check_exponent(riesz_gradient(3, 0.8), 2.7)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, len(KINDS) - 1))
def test_antisymmetry(x, which):
    K = KINDS[which]
    x = np.array(x[:K.d])
    if np.linalg.norm(x) < 1e-3:
        return
    assert np.array_equal(eval_kernel(K, -x), -eval_kernel(K, x))


def _divergence(K, x, h=1e-3):
    # fourth-order central stencil
    div = 0.0
    for a in range(K.d):
        e = np.zeros(K.d)
        e[a] = h
        f = [eval_kernel(K, x + k * e)[a] for k in (-2, -1, 1, 2)]
        div += (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    return div


def test_divergence_signs():
    pts = np.random.default_rng(2).uniform(-2, 2, size=(20, 3))
    pts = pts[np.linalg.norm(pts, axis=1) > 0.3]
    for x in pts:
        assert abs(_divergence(biot_savart(), x[:2])) < 1e-8
        assert _divergence(repulsive_poisson(3), x) >= -1e-6
        assert _divergence(riesz_gradient(3, 0.5), x) >= -1e-6
        assert _divergence(repulsive_poisson(2), x[:2]) >= -1e-6


def _brute_force_2d(K, eps, x):
    """K * rho_eps at x in polar coordinates centred on x (integrable there)."""
    rho = Mollifier(2, eps)

    def inner(theta):
        e = np.array([math.cos(theta), math.sin(theta)])

        def f(r):
            return r * eval_kernel(K, -r * e) * rho(x + r * e)

        lo = max(0.0, np.linalg.norm(x) - eps)
        hi = np.linalg.norm(x) + eps
        return integrate.quad_vec(f, lo, hi, epsabs=1e-13, epsrel=1e-12)[0]

    return integrate.quad_vec(inner, 0.0, 2 * math.pi, epsabs=1e-12, epsrel=1e-11, limit=200)[0]


@pytest.mark.parametrize("K", [biot_savart(), repulsive_poisson(2)])
def test_regularized_matches_brute_force_quadrature(K):
    eps = 0.3
    Ke = build_regularized(K, eps)
    for x in ([0.05, 0.02], [0.12, -0.2], [-0.25, 0.1]):
        x = np.array(x)
        np.testing.assert_allclose(Ke(x), _brute_force_2d(K, eps, x), atol=2e-7 / eps)


def _brute_force_3d(K, eps, x, n=48):
    """Gauss-Legendre cubature in spherical coordinates centred on x, r = R t^3."""
    rho = Mollifier(3, eps)
    R = np.linalg.norm(x) + eps
    t, wt = np.polynomial.legendre.leggauss(n)
    t, wt = 0.5 * (t + 1), 0.5 * wt
    c, wc = np.polynomial.legendre.leggauss(n)
    phi = np.linspace(0, 2 * math.pi, 2 * n, endpoint=False)
    r = R * t ** 3
    jac = 3 * R * t ** 2 * wt
    sin = np.sqrt(1 - c ** 2)
    e = np.stack([sin[:, None] * np.cos(phi)[None], sin[:, None] * np.sin(phi)[None],
                  np.broadcast_to(c[:, None], (n, 2 * n))], -1)
    total = np.zeros(3)
    for ri, ji in zip(r, jac):
        y = ri * e
        vals = eval_kernel(K, -y) * rho(x + y)[..., None]
        total += ji * ri ** 2 * np.einsum("i,ijk->k", wc, vals) * (2 * math.pi / (2 * n))
    return total


def test_riesz_regularized_matches_cubature():
    K = riesz_gradient(3, 0.5)
    eps = 0.4
    Ke = build_regularized(K, eps)
    for x in ([0.1, 0.0, 0.05], [0.2, -0.1, 0.3], [0.6, 0.2, 0.0]):
        x = np.array(x)
        ref = _brute_force_3d(K, eps, x, n=64)
        np.testing.assert_allclose(Ke(x), ref, rtol=1e-6, atol=1e-8)


def test_far_field_exact():
    Ke = build_regularized(biot_savart(), 0.1)
    np.testing.assert_allclose(Ke(np.array([1.0, 0.0])), eval_kernel(biot_savart(), [1.0, 0.0]), atol=1e-10)
    rng = np.random.default_rng(3)
    for K, eps in [(biot_savart(), 0.2), (repulsive_poisson(2), 0.2), (repulsive_poisson(3), 0.3)]:
        Ke = build_regularized(K, eps)
        cell = Ke.near_table[1, 0]
        d = K.d
        dirs = rng.normal(size=(100, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        x = dirs * rng.uniform(eps + cell, 5 * eps, size=(100, 1))
        assert np.max(np.abs(Ke(x) - eval_kernel(K, x))) <= 1e-10


def test_origin_and_finiteness():
    for K in KINDS:
        Ke = build_regularized(K, 0.2)
        z = np.zeros(K.d)
        assert np.array_equal(Ke(z), np.zeros(K.d))
        r = np.linspace(0, 1, 101)
        x = np.zeros((101, K.d))
        x[:, 0] = r
        assert np.all(np.isfinite(Ke(x)))


def test_halving_epsilon_doubles_sup():
    a = build_regularized(biot_savart(), 0.1).sup_norm()
    b = build_regularized(biot_savart(), 0.05).sup_norm()
    assert 1.8 <= b / a <= 2.2


def test_sup_norm_bound_check():
    rep = sup_norm_bound_check(biot_savart(), [0.2, 0.1, 0.05, 0.025], 4.0)
    assert -1.1 <= rep.fitted_exponent <= -0.9
    assert rep.bound_exponent == pytest.approx(-1.5)
    assert rep.bound_satisfied
    rep = sup_norm_bound_check(repulsive_poisson(2), [0.2, 0.1, 0.05, 0.025], 4.0)
    assert -1.1 <= rep.fitted_exponent <= -0.9 and rep.bound_satisfied
    with pytest.raises(InsufficientPoints):
        sup_norm_bound_check(biot_savart(), [0.1] * 4, 4.0)


def test_fourier_symbol_matches_real_space():
    # Gaussian vorticity: u = (1 - exp(-r^2/2)) x_perp / (2 pi r^2) in closed form
    n, L = 256, 16.0
    h = 2 * L / n
    ax = -L + (np.arange(n) + 0.5) * h
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1)
    r2 = np.sum(X ** 2, -1)
    w = np.exp(-r2 / 2) / (2 * math.pi)
    k = 2 * math.pi * np.fft.fftfreq(n, d=h)
    xi = np.stack(np.meshgrid(k, k, indexing="ij"))
    sym = biot_savart().fourier_symbol(xi)
    u = np.stack([np.fft.ifft2(sym[c] * np.fft.fft2(w)).real for c in range(2)], -1)
    exact = ((1 - np.exp(-r2 / 2)) / (2 * math.pi * r2))[..., None] * np.stack([-X[..., 1], X[..., 0]], -1)
    inner = r2 < 4.0
    # periodic images add a correction of order |x| / L^2 (about 1.3% here)
    assert np.max(np.abs(u[inner] - exact[inner])) < 0.02 * np.max(np.abs(exact))


def test_csv_export(tmp_path):
    Ke = build_regularized(biot_savart(), 0.2)
    path = tmp_path / "k.csv"
    Ke.to_csv(path, points_per_axis=5)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema_version")
    assert lines[1] == "x1,x2,K1,K2"
    assert len(lines) == 2 + 25
