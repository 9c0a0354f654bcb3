"""Singular interaction kernels and their mollified versions K_eps = K * rho_eps.

All supported kernels have the form ``K(x) = f(|x|) * x`` (repulsive Poisson,
Riesz gradient) or ``K(x) = f(|x|) * x_perp`` (Biot-Savart).  Convolving with
a radial mollifier preserves that structure, so the regularized kernel is
stored as a single radial profile ``g(r) = |K_eps(r e)|`` together with the
direction rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (DimensionMismatch, InsufficientPoints, InvalidExponents,
                     QuadratureFailure, ZeroPoint)
from .fields import SCHEMA_VERSION
from .mollifiers import Mollifier, sphere_area

BIOT_SAVART = "biot_savart"
REPULSIVE_POISSON = "repulsive_poisson"
RIESZ_GRADIENT = "riesz_gradient"
KINDS = (BIOT_SAVART, REPULSIVE_POISSON, RIESZ_GRADIENT)


@dataclass(frozen=True)
class KernelKind:
    """One of the admissible singular kernels.

    ``c_d`` only matters for the repulsive Poisson kernel and defaults to
    ``1 / |S^{d-1}|`` so that div K is a unit Dirac mass.  ``s`` is the Riesz
    exponent, restricted to ``[0, d - 2]``.
    """

    name: str = BIOT_SAVART
    d: int = 2
    c_d: float | None = None
    s: float = 0.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown kernel {self.name!r}; expected one of {KINDS}")
        if self.d < 2:
            raise DimensionMismatch("kernels are defined for d >= 2")
        if self.name == BIOT_SAVART and self.d != 2:
            raise DimensionMismatch("the Biot-Savart kernel needs d = 2")
        if self.name == REPULSIVE_POISSON:
            if self.c_d is None:
                object.__setattr__(self, "c_d", 1.0 / sphere_area(self.d))
            if not self.c_d > 0:
                raise ValueError("C_d must be positive")
        if self.name == RIESZ_GRADIENT and not 0 <= self.s <= self.d - 2:
            raise ValueError(f"Riesz exponent s={self.s} outside [0, d-2]")

    @property
    def rotational(self) -> bool:
        return self.name == BIOT_SAVART

    @property
    def harmonic(self) -> bool:
        """True when each component of K is harmonic away from the origin."""
        if self.name == RIESZ_GRADIENT:
            return abs(self.s - (self.d - 2)) < 1e-14
        return True

    def profile(self, r):
        """Scalar factor f(r) with K(x) = f(|x|) x (or x_perp)."""
        r = np.asarray(r, dtype=float)
        if self.name == BIOT_SAVART:
            return 1.0 / (2.0 * math.pi * r * r)
        if self.name == REPULSIVE_POISSON:
            return self.c_d * r ** (-float(self.d))
        if self.s == 0:
            return 1.0 / (r * r)
        return self.s * r ** (-self.s - 2.0)

    def direction(self, x):
        """x itself or its rotation by +pi/2."""
        x = np.asarray(x, dtype=float)
        if self.rotational:
            return np.stack([-x[..., 1], x[..., 0]], axis=-1)
        return x

    def fourier_symbol(self, xi):
        """Multiplier m(xi) with (K * f)^ = m(xi) f^(xi), numpy sign convention.

        ``xi`` has shape (d, ...); the returned array has the same shape and
        is purely imaginary.  The zero mode is set to 0.
        """
        xi = np.asarray(xi, dtype=float)
        k2 = np.sum(xi * xi, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.name == BIOT_SAVART:
                perp = np.stack([-xi[1], xi[0]])
                sym = -1j * perp / k2
            elif self.name == REPULSIVE_POISSON:
                sym = -1j * xi * (self.c_d * sphere_area(self.d)) / k2
            else:
                sym = -1j * xi * _riesz_constant(self.d, self.s) * k2 ** ((self.s - self.d) / 2)
        sym[:, k2 == 0] = 0.0
        return sym


def _riesz_constant(d, s):
    # Fourier transform of K = grad(-|x|^-s) is -i xi c |xi|^(s-d); s = 0 is the log limit.
    if s == 0:
        return math.pi ** (d / 2) * 2.0 ** (d - 1) * math.gamma(d / 2)
    return math.pi ** (d / 2) * 2.0 ** (d - s) * math.gamma((d - s) / 2) / math.gamma(s / 2)


def biot_savart() -> KernelKind:
    return KernelKind(BIOT_SAVART, 2)


def repulsive_poisson(d: int = 2, c_d: float | None = None) -> KernelKind:
    return KernelKind(REPULSIVE_POISSON, d, c_d=c_d)


def riesz_gradient(d: int, s: float) -> KernelKind:
    return KernelKind(RIESZ_GRADIENT, d, s=s)


def check_exponent(kind: KernelKind, p: float) -> None:
    """Raise unless p is compatible with the local integrability of ``kind``."""
    if p <= 2:
        raise InvalidExponents(f"p must exceed 2, got {p}")
    if kind.name == REPULSIVE_POISSON and p <= kind.d:
        raise InvalidExponents(f"p must exceed d={kind.d} for the repulsive Poisson kernel")
    if kind.name == RIESZ_GRADIENT and p <= kind.s + 2:
        raise InvalidExponents(f"p must exceed s+2={kind.s + 2} for the Riesz kernel")


def eval_kernel(kind: KernelKind, x):
    """K(x) for one point or an array of points with trailing dimension d."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != kind.d:
        raise DimensionMismatch(f"point dimension {x.shape[-1]} != kernel dimension {kind.d}")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ZeroPoint("kernel is singular at the origin")
    return kind.profile(r)[..., None] * kind.direction(x)


# ---------------------------------------------------------------------------
# regularization


@lru_cache(maxsize=None)
def _gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _composite(a, b, panels, n):
    """Composite Gauss-Legendre nodes/weights on [a, b] (a, b arrays)."""
    x, w = _gauss(n)
    edges = np.linspace(0.0, 1.0, panels + 1)
    t = (edges[:-1, None] + 0.5 * (x[None, :] + 1.0) * np.diff(edges)[:, None]).ravel()
    wt = (0.5 * w[None, :] * np.diff(edges)[:, None]).ravel()
    a = np.asarray(a)[..., None]
    b = np.asarray(b)[..., None]
    return a + (b - a) * t, (b - a) * wt


def _profile_quadrature(kind, eps, r, level, nodes=64, density=None):
    """g(r) = K_eps(r e) . u by polar quadrature about the singularity.

    ``density`` replaces rho_eps by another radial profile supported in the
    ball of radius ``eps``.

    For the 2D case the point sits on e1 and the result is the component
    along e1 (or e2 for Biot-Savart); in 3D it sits on e3 and the azimuthal
    integral is done analytically.
    """
    d = kind.d
    if d not in (2, 3):
        raise DimensionMismatch("kernel regularization is implemented for d = 2 and d = 3")
    dens = Mollifier(d, eps).radial if density is None else density
    panels = 2 ** level
    r = np.atleast_1d(np.asarray(r, dtype=float))[:, None]
    inside = r < eps
    th_max = np.where(inside, math.pi, np.arcsin(np.minimum(1.0, eps / np.maximum(r, eps))))
    th, wth = _composite(np.zeros_like(th_max), th_max, panels, nodes)
    th, wth = th[:, 0, :], wth[:, 0, :]  # (n_r, n_theta)
    c = np.cos(th)
    root = np.sqrt(np.maximum(eps * eps - (r * np.sin(th)) ** 2, 0.0))
    hi = r * c + root
    lo = np.where(inside, 0.0, np.maximum(r * c - root, 0.0))
    t, wt = _composite(0.0, 1.0, panels, nodes)
    # y = lo + (hi - lo) t^3 tames the algebraic y^(d-s-2) behaviour at y = 0
    t3 = t ** 3
    y = lo[..., None] + (hi - lo)[..., None] * t3
    wy = (hi - lo)[..., None] * 3.0 * t * t * wt
    dist = np.sqrt(np.maximum(r[..., None] ** 2 - 2.0 * r[..., None] * y * c[..., None] + y * y, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # f(y) y^d stays bounded for every admissible kernel
        fy = np.where(y > 0, kind.profile(np.where(y > 0, y, 1.0)) * y ** d, 0.0)
    integrand = fy * c[..., None] * dens(dist)
    # 2D: both half-planes by symmetry; 3D: azimuth done analytically
    meas = 2.0 if d == 2 else 2.0 * math.pi * np.sin(th)[..., None]
    return np.sum(meas * integrand * wy * wth[..., None], axis=(1, 2))


def _chunked(kind, eps, r, level, chunk=64):
    return np.concatenate([_profile_quadrature(kind, eps, r[i:i + chunk], level)
                           for i in range(0, len(r), chunk)])


def _adaptive_profile(kind, eps, r, tol=1e-8, max_level=4):
    r = np.asarray(r, dtype=float)
    prev = _chunked(kind, eps, r, 0)
    for level in range(1, max_level + 1):
        cur = _chunked(kind, eps, r, level, chunk=max(1, 64 // 4 ** level))
        scale = max(np.max(np.abs(cur)), 1e-300)
        if np.max(np.abs(cur - prev)) <= tol * scale:
            return cur
        prev = cur
    raise QuadratureFailure(
        f"kernel regularization did not reach tolerance {tol} at eps={eps}")


@dataclass(frozen=True)
class RegularizedKernel:
    """K_eps = K * rho_eps stored as a radial profile table.

    ``near_table`` holds (r, g(r)) on [0, table_radius].  For harmonic kernels
    the table only needs to cover the mollifier support because K_eps = K
    exactly outside it; otherwise it extends to ``far_radius`` and K is used
    beyond (relative error of order (eps / r)^2).
    """

    kind: KernelKind
    epsilon: float
    r_rho: float
    p_prime: float
    near_table: np.ndarray = field(repr=False)
    _spline: CubicSpline = field(repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.kind.d

    @property
    def table_radius(self) -> float:
        return float(self.near_table[-1, 0])

    @property
    def mollifier(self) -> Mollifier:
        return Mollifier(self.kind.d, self.epsilon * self.r_rho)

    def magnitude(self, r):
        """|K_eps| as a function of |x|."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        near = r <= self.table_radius
        out[near] = self._spline(r[near])
        far = ~near
        rf = r[far]
        out[far] = self.kind.profile(rf) * rf
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DimensionMismatch(f"point dimension {x.shape[-1]} != {self.d}")
        r = np.linalg.norm(x, axis=-1)
        g = self.magnitude(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, g / np.where(r > 0, r, 1.0), 0.0)
        return scale[..., None] * self.kind.direction(x)

    def sup_norm(self) -> float:
        """max |K_eps| over the table (the maximum sits inside it)."""
        return float(np.max(np.abs(self.near_table[:, 1])))

    def fourier_symbol(self, xi):
        k = np.sqrt(np.sum(np.asarray(xi, dtype=float) ** 2, axis=0))
        return self.kind.fourier_symbol(xi) * self.mollifier.fourier(k)[None]

    def to_csv(self, path, points_per_axis: int = 65) -> None:
        """Dump Cartesian samples (x_1..x_d, K_1..K_d) on the support box."""
        R = self.epsilon * self.r_rho
        ax = np.linspace(-R, R, points_per_axis)
        mesh = np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)
        vals = self(mesh)
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.d)] + [f"K{i + 1}" for i in range(self.d)])
            for row_x, row_k in zip(mesh, vals):
                w.writerow([repr(float(v)) for v in row_x] + [repr(float(v)) for v in row_k])


def build_regularized(kind: KernelKind, epsilon: float, rho_radius: float = 1.0,
                      table_resolution: int = 256, p: float = 4.0,
                      far_radius: float | None = None) -> RegularizedKernel:
    """Tabulate K * rho_eps by adaptive polar quadrature."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if table_resolution < 64:
        raise ValueError("table_resolution must be at least 64")
    eps = epsilon * rho_radius
    if kind.harmonic:
        R = eps
    else:
        R = far_radius if far_radius is not None else 20.0 * eps
    # table_resolution nodes per support diameter near the core, graded beyond
    r = np.linspace(0.0, min(R, 2 * eps), int(math.ceil(table_resolution * min(R, 2 * eps) / (2 * eps))) + 1)
    if R > 2 * eps:
        step = r[1] - r[0]
        n_far = int(math.ceil(math.log(R / (2 * eps)) / math.log1p(step / (2 * eps))))
        r = np.concatenate([r, np.geomspace(2 * eps, R, n_far + 1)[1:]])
    g = np.zeros_like(r)
    g[1:] = _adaptive_profile(kind, eps, r[1:])
    spline = CubicSpline(r, g, bc_type=((2, 0.0), "not-a-knot"))
    table = np.column_stack([r, g])
    return RegularizedKernel(kind, float(epsilon), float(rho_radius), p / (p - 1.0), table, spline)


class SupNormReport(NamedTuple):
    fitted_exponent: float
    bound_exponent: float
    constant: float
    sup_norms: tuple
    bound_satisfied: bool


def sup_norm_bound_check(kind: KernelKind, epsilons, p: float,
                         table_resolution: int = 256) -> SupNormReport:
    """Fit the log-log slope of max|K_eps| and compare with -d/p'."""
    eps = np.asarray(sorted(set(float(e) for e in epsilons)))
    if eps.size < 4:
        raise InsufficientPoints("need at least 4 distinct epsilons")
    if np.any(eps > 0.5) or np.any(eps <= 0):
        raise ValueError("epsilons must lie in (0, 0.5]")
    check_exponent(kind, p)
    p_prime = p / (p - 1.0)
    sups = np.array([build_regularized(kind, e, table_resolution=table_resolution, p=p).sup_norm()
                     for e in eps])
    slope = float(np.polyfit(np.log(eps), np.log(sups), 1)[0])
    bound = -kind.d / p_prime
    const = float(np.max(sups * eps ** (kind.d / p_prime)))
    return SupNormReport(slope, bound, const, tuple(sups), slope >= bound)
