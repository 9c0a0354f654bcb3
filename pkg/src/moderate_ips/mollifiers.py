"""Compactly supported radial bumps and the moderate-interaction scaling.

The same bump ``c * exp(-1 / (1 - |x|^2))`` serves as the kernel mollifier
rho (radius eps) and as the interaction potential V (radius N**-beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .errors import InvalidExponents


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _bump_profile(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri * ri))
    return out


@lru_cache(maxsize=None)
def _unit_normalization(d: int) -> float:
    val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1),
                            0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / (sphere_area(d) * val)


@lru_cache(maxsize=None)
def _radial_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Mollifier:
    """Normalized radial bump of the given support radius in R^d."""

    d: int = 2
    support_radius: float = 1.0
    normalization: float = field(init=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")
        c = _unit_normalization(self.d) / self.support_radius ** self.d
        object.__setattr__(self, "normalization", c)

    def radial(self, r):
        """Value as a function of |x|."""
        return self.normalization * _bump_profile(np.asarray(r, dtype=float) / self.support_radius)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.radial(np.linalg.norm(x, axis=-1))

    def rescaled(self, factor: float) -> "Mollifier":
        """``factor**-d * V(x / factor)``: same shape, radius times ``factor``."""
        return Mollifier(self.d, self.support_radius * factor)

    def mass_within(self, r):
        """Mass of the bump inside the ball of radius ``r`` (radial CDF)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        a = self.support_radius
        out = np.empty_like(r)
        c1 = _unit_normalization(self.d) * sphere_area(self.d)
        for i, ri in enumerate(r):
            u = min(ri / a, 1.0)
            if u <= 0:
                out[i] = 0.0
                continue
            val, _ = integrate.quad(lambda t: math.exp(-1.0 / (1.0 - t * t)) * t ** (self.d - 1),
                                    0.0, u, epsabs=0.0, epsrel=1e-13, limit=200)
            out[i] = c1 * val
        return out

    def lp_norm(self, p: float) -> float:
        """||V||_{L^p} by radial quadrature."""
        u, w = _radial_nodes(400)
        a = self.support_radius
        vals = self.radial(u * a) ** p * (u * a) ** (self.d - 1)
        return float((sphere_area(self.d) * a * np.sum(w * vals)) ** (1.0 / p))

    def second_moment(self) -> float:
        """E|X|^2 for X distributed by the bump."""
        u, w = _radial_nodes(400)
        a = self.support_radius
        r = u * a
        return float(sphere_area(self.d) * a * np.sum(w * self.radial(r) * r ** (self.d + 1)))

    def fourier(self, k):
        """Fourier transform at wavenumber magnitude ``k`` (value 1 at k=0)."""
        k = np.asarray(k, dtype=float)
        flat = np.abs(k.ravel())
        uniq, inv = np.unique(flat, return_inverse=True)
        u, w = _radial_nodes(512)
        a = self.support_radius
        prof = _unit_normalization(self.d) * _bump_profile(u) * u ** (self.d - 1) * w
        kr = np.outer(uniq * a, u)
        if self.d == 2:
            kern = special.j0(kr)
        elif self.d == 3:
            kern = special.spherical_jn(0, kr)
        else:
            nu = self.d / 2 - 1
            with np.errstate(invalid="ignore", divide="ignore"):
                kern = special.gamma(nu + 1) * special.jv(nu, kr) * (kr / 2) ** (-nu)
            kern[kr == 0] = 1.0
        vals = sphere_area(self.d) * kern @ prof
        return vals[inv].reshape(k.shape)


@dataclass(frozen=True)
class ModerateScaling:
    """Parameters of V^N(x) = N^{d beta} V(N^beta x)."""

    beta: float
    N: int
    m: float = 4.0
    p: float = 4.0
    d: int = 2
    strict: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.strict:
            bound = 1.0 / (4.0 * self.m * (self.d + 2))
            if self.beta > bound * (1 + 1e-12):
                raise InvalidExponents(
                    f"beta={self.beta} exceeds 1/(4m(d+2)) = {bound:.6g}; "
                    "pass strict=False for exploratory runs")

    @property
    def shrink(self) -> float:
        """Support radius of V^N relative to V, N**-beta."""
        return float(self.N) ** (-self.beta)


def moderate_potential(moll: Mollifier, scaling: ModerateScaling) -> Mollifier:
    """V^N as a bump of radius ``support_radius * N**-beta``."""
    return moll.rescaled(scaling.shrink)


def eval_VN(moll: Mollifier, scaling: ModerateScaling, x):
    return moderate_potential(moll, scaling)(x)


class BetaBounds(NamedTuple):
    beta_hypothesis: float
    beta_extended: float


def max_beta(m: float, d: int, p: float) -> BetaBounds:
    """Largest admissible beta under the standing hypothesis and the relaxed range."""
    if m <= 2 or p <= 2:
        raise InvalidExponents(f"need m > 2 and p > 2, got m={m}, p={p}")
    if d < 2:
        raise InvalidExponents("d must be at least 2")
    beta_h = 1.0 / (4.0 * m * (d + 2))
    beta_e = 1.0 / (2 * m * d + 16 + 2 * m * d * max(1 - 2.0 / p, 2.0 / m))
    return BetaBounds(beta_h, beta_e)
