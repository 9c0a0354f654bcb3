import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from moderate_ips.errors import InvalidExponents
from moderate_ips.mollifiers import Mollifier, ModerateScaling, eval_VN, max_beta, moderate_potential


def _mass_2d(f, R):
    val, _ = integrate.dblquad(lambda y, x: f(np.array([x, y])), -R, R, -R, R, epsabs=1e-13, epsrel=1e-12)
    return val


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_unit_mass(d):
    V = Mollifier(d)
    # radial quadrature of the profile is an independent check of the constant
    val, _ = integrate.quad(lambda r: V.radial(r) * r ** (d - 1), 0, 1, epsabs=0, epsrel=1e-13)
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    assert abs(area * val - 1) < 1e-10


def test_unit_mass_cartesian():
    assert abs(_mass_2d(Mollifier(2), 1.0) - 1) < 1e-10


def test_support_and_sign():
    V = Mollifier(2, 0.7)
    x = np.random.default_rng(0).uniform(-2, 2, size=(2000, 2))
    v = V(x)
    assert np.all(v >= 0)
    assert np.all(v[np.linalg.norm(x, axis=1) >= 0.7] == 0)


def test_identity_scaling_at_N_equal_one():
    V = Mollifier(2)
    sc = ModerateScaling(1 / 64, 1)
    x = np.random.default_rng(1).normal(size=(20, 2)) * 0.5
    assert np.array_equal(eval_VN(V, sc, x), V(x))


@pytest.mark.parametrize("N", [1, 16, 256, 4096])
def test_VN_mass(N):
    VN = moderate_potential(Mollifier(2), ModerateScaling(1 / 64, N))
    assert abs(_mass_2d(VN, VN.support_radius) - 1) < 1e-8


def test_support_shrink():
    sc = ModerateScaling(1 / 64, 4096)
    assert sc.shrink == pytest.approx(4096 ** (-1 / 64))
    assert round(sc.shrink, 3) == 0.878
    VN = moderate_potential(Mollifier(2), sc)
    assert VN.support_radius == pytest.approx(0.878, abs=1e-3)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_lp_growth(p):
    V = Mollifier(2)
    beta = 1 / 64
    for N in (1, 16, 256):
        VN = moderate_potential(V, ModerateScaling(beta, N))
        expect = N ** (2 * beta * (1 - 1 / p)) * V.lp_norm(p)
        assert VN.lp_norm(p) == pytest.approx(expect, rel=1e-10)


def test_lp_norm_against_quadrature():
    V = Mollifier(2)
    val, _ = integrate.quad(lambda r: V.radial(r) ** 3 * r, 0, 1, epsabs=0, epsrel=1e-13)
    assert V.lp_norm(3.0) == pytest.approx((2 * math.pi * val) ** (1 / 3), rel=1e-10)


def test_fourier_transform():
    V = Mollifier(2, 0.5)
    assert V.fourier(0.0) == pytest.approx(1.0, abs=1e-12)
    # direct 2D transform at k = (3, 0)
    val, _ = integrate.dblquad(lambda y, x: V(np.array([x, y])) * math.cos(3 * x), -0.5, 0.5, -0.5, 0.5,
                               epsabs=1e-12)
    assert V.fourier(3.0) == pytest.approx(val, abs=1e-9)


def test_mass_within():
    V = Mollifier(3, 2.0)
    assert V.mass_within(2.0)[0] == pytest.approx(1.0, abs=1e-12)
    assert V.mass_within(0.0)[0] == 0.0
    m = V.mass_within([0.5, 1.0, 1.5])
    assert np.all(np.diff(m) > 0)


def test_max_beta_values():
    b = max_beta(4, 2, 4)
    assert b.beta_hypothesis == 1 / 64
    assert b.beta_extended == pytest.approx(1 / 40)
    big = max_beta(1e6, 2, 4)
    assert big.beta_hypothesis < 1e-6 and big.beta_extended < 1e-6


def test_max_beta_errors():
    with pytest.raises(InvalidExponents):
        max_beta(2, 2, 4)
    with pytest.raises(InvalidExponents):
        max_beta(4, 2, 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(2.01, 50), st.integers(2, 6), st.floats(2.01, 50))
def test_extended_range_is_larger(m, d, p):
    b = max_beta(m, d, p)
    assert b.beta_hypothesis < b.beta_extended


def test_strict_scaling():
    with pytest.raises(InvalidExponents):
        ModerateScaling(0.1, 100, m=4, d=2)
    sc = ModerateScaling(0.1, 100, m=4, d=2, strict=False)
    assert sc.shrink == pytest.approx(100 ** -0.1)
    ModerateScaling(1 / 64, 100)
    with pytest.raises(ValueError):
        ModerateScaling(1 / 64, 0)
