"""Kraichnan-type environmental noise.

The covariance is

    Q(z) = int_{|k| >= 1} |k|^-(d+alpha) cos(e^n k.z) (I - k k^T / |k|^2) dk

with ``n = n_scale``.  It is isotropic, so it reduces to two radial
functions of ``s = e^n |z|``:

    d = 2:  Q = A(s) I + B(s) R(2 psi),  R = [[cos, sin], [sin, -cos]]
    d = 3:  Q = A(s) I + B(s) zhat zhat^T

with A, B one-dimensional Bessel integrals.  The random field is synthesized
from M Fourier modes drawn from the normalized spectrum; every particle sees
the same modes and the same Gaussian increments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import integrate, special
from scipy.spatial.transform import Rotation

from . import rng as rng_mod
from .errors import BoxTooSmall, DimensionMismatch, InvalidAlpha, TailTruncationError
from .fields import SCHEMA_VERSION
from .mollifiers import sphere_area

TAIL_TOL = 1e-8


def _check(d, alpha):
    if d not in (2, 3):
        raise DimensionMismatch("noise is implemented for d = 2 and d = 3")
    if not alpha > 2:
        raise InvalidAlpha(f"alpha must exceed 2, got {alpha}")


def nu_theoretical(d: int, alpha: float) -> float:
    """nu with Q(0) = 2 nu I."""
    if d < 2:
        raise DimensionMismatch("d must be at least 2")
    if not alpha > 2:
        raise InvalidAlpha(f"alpha must exceed 2, got {alpha}")
    return 0.5 * (d - 1) / d * sphere_area(d) / alpha


def spectrum_mass(d: int, alpha: float) -> float:
    """int_{|k|>=1} |k|^-(d+alpha) dk."""
    return sphere_area(d) / alpha


# ---------------------------------------------------------------------------
# radial covariance functions


def _pair_2d(t):
    j0, j1 = special.j0(t), special.j1(t)
    j2 = 2.0 * j1 / t - j0
    small = t < 1.0
    if np.any(small):
        # the recurrence cancels badly near 0
        j2[small] = special.jv(2, t[small])
    return j0, j2


def _pair_3d(t):
    sn, cs = np.sin(t), np.cos(t)
    t2 = t * t
    j0 = sn / t
    j1 = sn / t2 - cs / t
    j2 = (3.0 / t2 - 1.0) * sn / t - 3.0 * cs / t2
    small = t < 1.0
    if np.any(small):
        ts = t[small]
        j0[small] = special.spherical_jn(0, ts)
        j1[small] = special.spherical_jn(1, ts)
        j2[small] = special.spherical_jn(2, ts)
    return j0 - j1 / t, j2


def _kernels(d):
    """Angular constant and the pair (g_A, g_B) evaluated together."""
    if d == 2:
        return math.pi, _pair_2d
    return 4.0 * math.pi, _pair_3d


def _bessel_tail(p, k, T, terms=12):
    """int_T^inf t^p J_k(t) dt (k = 0 or 1) by repeated integration by parts."""
    val, coef = 0.0, 1.0
    for _ in range(terms):
        if k == 0:
            val += coef * -T ** p * special.j1(T)
            coef *= -(p - 1)
        else:
            val += coef * T ** p * special.j0(T)
            coef *= p
        k, p = 1 - k, p - 1
    return val, abs(coef) * T ** p * math.sqrt(2 / (math.pi * T))


def _tail(d, alpha, T):
    """int_T^inf t^mu g(t) dt for g_A and g_B, with an error estimate."""
    mu = -1.0 - alpha
    if d == 2:
        ta, ea = _bessel_tail(mu, 0, T)
        # J2 = -t (J1 / t)'
        tb1, eb1 = _bessel_tail(mu - 1, 1, T)
        tb = T ** mu * special.j1(T) + (mu + 1) * tb1
        return ta, tb, ea + abs(mu + 1) * eb1
    # spherical Bessel functions are finite sums of t^-a sin t, t^-a cos t
    def fourier(f_sin, f_cos):
        vs, es = integrate.quad(f_sin, T, np.inf, weight="sin", wvar=1.0, limlst=200)
        vc, ec = integrate.quad(f_cos, T, np.inf, weight="cos", wvar=1.0, limlst=200)
        return vs + vc, es + ec

    ta, ea = fourier(lambda t: t ** mu * (1 / t - 1 / t ** 3), lambda t: t ** (mu - 2))
    tb, eb = fourier(lambda t: t ** mu * (3 / t ** 3 - 1 / t), lambda t: -3 * t ** (mu - 2))
    return ta, tb, ea + eb


class _RadialTable:
    """Cumulative integrals F(T) = int_T^inf t^mu g(t) dt on panel edges."""

    NODES = 16
    S_MIN = 1e-8

    def __init__(self, d, alpha, t_max):
        self.d, self.alpha, self.mu = d, alpha, -1.0 - alpha
        self.c, self.g = _kernels(d)
        geo = np.geomspace(self.S_MIN, 1.0, 55)
        lin = np.arange(2.0, math.ceil(t_max) + 2.0)
        self.edges = np.concatenate([geo, lin])
        x, w = np.polynomial.legendre.leggauss(self.NODES)
        self._x, self._w = 0.5 * (x + 1.0), 0.5 * w
        # partial panels are at most one unit long, fewer nodes suffice
        x, w = np.polynomial.legendre.leggauss(10)
        self._xp, self._wp = 0.5 * (x + 1.0), 0.5 * w
        a, b = self.edges[:-1], self.edges[1:]
        t = a[:, None] + (b - a)[:, None] * self._x
        wt = (b - a)[:, None] * self._w
        ga, gb = self.g(t)
        tm = t ** self.mu * wt
        pa = np.sum(tm * ga, axis=1)
        pb = np.sum(tm * gb, axis=1)
        ta, tb, self.tail_err = _tail(d, alpha, self.edges[-1])
        # reverse cumulative sums: F at each edge
        self.FA = np.append(np.cumsum(pa[::-1])[::-1], 0.0) + ta
        self.FB = np.append(np.cumsum(pb[::-1])[::-1], 0.0) + tb

    @property
    def t_max(self):
        return float(self.edges[-1])

    def AB(self, s):
        """A(s), B(s) for s array (s <= t_max)."""
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        A = np.empty_like(flat)
        B = np.empty_like(flat)
        small = flat < self.S_MIN
        A[small] = self.c * (1.0 if self.d == 2 else 2.0 / 3.0) / self.alpha
        B[small] = 0.0
        q = flat[~small]
        i = np.clip(np.searchsorted(self.edges, q, side="right") - 1, 0, len(self.edges) - 2)
        hi = self.edges[i + 1]
        t = q[:, None] + (hi - q)[:, None] * self._xp
        wt = (hi - q)[:, None] * self._wp
        ga, gb = self.g(t)
        tm = t ** self.mu * wt
        fa = self.FA[i + 1] + np.sum(tm * ga, axis=1)
        fb = self.FB[i + 1] + np.sum(tm * gb, axis=1)
        scale = self.c * q ** self.alpha
        A[~small] = scale * fa
        B[~small] = scale * fb
        err = np.zeros_like(flat)
        err[~small] = self.c * q ** self.alpha * self.tail_err
        return A.reshape(s.shape), B.reshape(s.shape), err.reshape(s.shape)


@lru_cache(maxsize=16)
def _table(d, alpha, t_max):
    return _RadialTable(d, alpha, t_max)


def _radial_table(d, alpha, s_max):
    # tables come in power-of-two sizes so repeated calls reuse them
    t_max = 2.0 ** max(7, math.ceil(math.log2(max(s_max, 1.0) + 100.0)))
    return _table(d, float(alpha), t_max)


def radial_coefficients(d: int, alpha: float, s):
    """(A, B) as functions of s = e^n |z|; raises if the tail is not negligible."""
    _check(d, alpha)
    s = np.abs(np.asarray(s, dtype=float))
    table = _radial_table(d, alpha, float(np.max(s, initial=0.0)))
    A, B, err = table.AB(s)
    # compare against the local amplitude, not the pointwise value, which
    # passes through zero with the Bessel oscillation
    c = _kernels(d)[0]
    envelope = np.maximum(np.sqrt(A * A + B * B), c * math.sqrt(2 / math.pi) * np.maximum(s, 1.0) ** -1.5)
    bad = err > TAIL_TOL * envelope
    if np.any(bad):
        raise TailTruncationError(
            f"spectral tail estimate {np.max(err[bad]):.3g} exceeds {TAIL_TOL} of the result")
    return A, B


def frobenius_profile(d: int, alpha: float, s):
    """|Q|_F as a function of s (isotropy makes it radial)."""
    A, B = radial_coefficients(d, alpha, s)
    if d == 2:
        return np.sqrt(2 * A * A + 2 * B * B)
    return np.sqrt(np.maximum(3 * A * A + 2 * A * B + B * B, 0.0))


def covariance_quadrature(d: int, alpha: float, n_scale: float, z):
    """Q(z) as a d x d matrix (or a stack of them for z of shape (..., d))."""
    _check(d, alpha)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != d:
        raise DimensionMismatch(f"point dimension {z.shape[-1]} != {d}")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    rz = np.linalg.norm(z, axis=-1)
    A, B = radial_coefficients(d, alpha, math.exp(n_scale) * rz)
    with np.errstate(invalid="ignore", divide="ignore"):
        zhat = np.where(rz[..., None] > 0, z / np.where(rz > 0, rz, 1.0)[..., None], 0.0)
    eye = np.eye(d)
    if d == 2:
        c2 = zhat[..., 0] ** 2 - zhat[..., 1] ** 2
        s2 = 2 * zhat[..., 0] * zhat[..., 1]
        R = np.stack([np.stack([c2, s2], -1), np.stack([s2, -c2], -1)], -2)
    else:
        R = zhat[..., :, None] * zhat[..., None, :]
    return A[..., None, None] * eye + B[..., None, None] * R


def qn_lr_norm(d: int, alpha: float, n_scale: float, r: float, box: float,
               resolution: int = 8) -> float:
    """||Q_N||_{L^r} over the ball of radius ``box``.

    By isotropy the d-dimensional quadrature collapses to a radial one in
    s = e^n |z|; ``resolution`` is the number of Gauss nodes per unit of s.
    """
    _check(d, alpha)
    if r < 2:
        raise ValueError("r must be at least 2")
    if not box > 0:
        raise ValueError("box must be positive")
    scale = math.exp(n_scale)
    s_max = scale * box
    q0 = float(frobenius_profile(d, alpha, np.array([0.0]))[0])
    shell = np.linspace(0.9 * s_max, s_max, 4096)
    if np.max(frobenius_profile(d, alpha, shell)) > 1e-6 * q0:
        raise BoxTooSmall(f"|Q| at the boundary of a box of radius {box} exceeds 1e-6 |Q(0)|")
    x, w = np.polynomial.legendre.leggauss(resolution)
    edges = np.linspace(0.0, s_max, max(1, math.ceil(s_max)) + 1)
    a, b = edges[:-1], edges[1:]
    s = (a[:, None] + 0.5 * (x + 1.0) * (b - a)[:, None]).ravel()
    ws = (0.5 * w * (b - a)[:, None]).ravel()
    f = frobenius_profile(d, alpha, s)
    integral = sphere_area(d) * np.sum(ws * f ** r * s ** (d - 1)) / scale ** d
    return float(integral ** (1.0 / r))


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class NoiseField:
    """M Fourier modes with weights and polarizations orthogonal to k.

    ``wavevectors`` already include the factor e^{n_scale};
    ``polarizations[j]`` holds d-1 orthonormal vectors spanning k_j^perp.
    """

    d: int
    alpha: float
    n_scale: float
    wavevectors: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    polarizations: np.ndarray = field(repr=False)
    nu: float = 0.0
    coupled: bool = False

    @property
    def mode_count(self) -> int:
        return len(self.weights)

    def synthesized_covariance(self, z):
        """Covariance of this mode set, sum_j w_j P_j cos(k_j . z)."""
        z = np.asarray(z, dtype=float)
        ph = np.cos(z @ self.wavevectors.T)
        P = np.einsum("jpa,jpb->jab", self.polarizations, self.polarizations)
        return np.einsum("...j,jab->...ab", ph * self.weights, P)


@dataclass(frozen=True)
class ModeIncrements:
    """Shared N(0, dt) draws, one cos and one sin channel per polarization."""

    xi: np.ndarray
    eta: np.ndarray
    dt: float


def _as_generator(seed, stream_id, *key):
    if isinstance(seed, np.random.Generator):
        return seed
    return rng_mod.stream(seed, stream_id, *key)


def build_noise(d: int, alpha: float, n_scale: float, M: int, seed, coupled: bool = False) -> NoiseField:
    """Draw M modes from the density proportional to |k|^-(d+alpha) on |k| >= e^n.

    Directions come in orthogonal pairs (2D) or triads (3D) sharing one
    radius, which keeps every mode's marginal law exact while making the
    synthesized Q(0) equal to 2 nu I for every draw.  M must be a multiple
    of d.
    """
    _check(d, alpha)
    if M < 16:
        raise ValueError("M must be at least 16")
    if M % d:
        raise ValueError(f"M must be a multiple of d={d}")
    if n_scale < 0:
        raise ValueError("n_scale must be nonnegative")
    g = _as_generator(seed, rng_mod.NOISE_MODES)
    groups = M // d
    radius = g.random(groups) ** (-1.0 / alpha)
    radius = np.where(np.isfinite(radius), radius, 1e300)
    if d == 2:
        phi = g.uniform(0.0, 2 * math.pi, groups)
        u = np.stack([np.cos(phi), np.sin(phi)], -1)
        v = np.stack([-u[:, 1], u[:, 0]], -1)
        dirs = np.stack([u, v], 1)  # (groups, 2, 2)
        pols = np.stack([v, -u], 1)[:, :, None, :]  # (groups, 2, 1, 2)
    else:
        rot = Rotation.random(groups, random_state=g).as_matrix()
        dirs = np.transpose(rot, (0, 2, 1))  # rows are an orthonormal triad
        pols = np.stack([dirs[:, [1, 2]], dirs[:, [2, 0]], dirs[:, [0, 1]]], 1)
    k = (math.exp(n_scale) * radius)[:, None, None] * dirs
    w = np.full(M, spectrum_mass(d, alpha) / M)
    return NoiseField(d, float(alpha), float(n_scale), k.reshape(M, d), w,
                      pols.reshape(M, d - 1, d), nu_theoretical(d, alpha), coupled)


def sample_shared_increments(noise: NoiseField, dt: float, rng) -> ModeIncrements:
    """Gaussian increments for one time step, shared by every particle."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = (noise.mode_count, noise.d - 1)
    sd = math.sqrt(dt)
    return ModeIncrements(rng.normal(0.0, sd, shape), rng.normal(0.0, sd, shape), float(dt))


def velocity_increment(noise: NoiseField, incs: ModeIncrements, x):
    """sum_j sqrt(w_j) P_j [cos(k_j.x) xi_j + sin(k_j.x) eta_j] at points x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != noise.d:
        raise DimensionMismatch(f"point dimension {x.shape[-1]} != {noise.d}")
    ph = x @ noise.wavevectors.T
    sw = np.sqrt(noise.weights)[:, None, None]
    # fold weights, draws and polarizations into (M, d) matrices
    wc = np.sum(sw * incs.xi[..., None] * noise.polarizations, axis=1)
    ws = np.sum(sw * incs.eta[..., None] * noise.polarizations, axis=1)
    return np.cos(ph) @ wc + np.sin(ph) @ ws


class CovarianceEstimate(NamedTuple):
    points: np.ndarray
    mean: np.ndarray  # (P, d, d)
    stderr: np.ndarray
    replicas: int


def empirical_covariance(d: int, alpha: float, n_scale: float, M: int, points, replicas: int,
                         seed: int = 0, bases: int = 4, spacing: float = 50.0) -> CovarianceEstimate:
    """Monte Carlo estimate of E[u(x + z) u(x)^T] over fresh mode sets and increments.

    u is one unit-time velocity increment.  Each replica averages over
    ``bases`` base points placed ``spacing`` apart (far beyond the
    correlation length), which reduces the variance without biasing the
    estimate.  Standard errors come from the spread across replicas.
    """
    _check(d, alpha)
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    z = np.atleast_2d(np.asarray(points, dtype=float))
    if z.shape[1] != d:
        raise DimensionMismatch(f"point dimension {z.shape[1]} != {d}")
    P = len(z)
    base = np.zeros((bases, d))
    base[:, 0] = spacing * np.arange(bases)
    x0 = np.repeat(base, P, axis=0)
    xz = x0 + np.tile(z, (bases, 1))
    pts = np.concatenate([base, xz])
    acc = np.zeros((replicas, P, d, d))
    for r in range(replicas):
        g = rng_mod.stream(seed, rng_mod.NOISE_CHECK, M, r)
        noise = build_noise(d, alpha, n_scale, M, g)
        u = velocity_increment(noise, sample_shared_increments(noise, 1.0, g), pts)
        u0 = np.repeat(u[:bases], P, axis=0)
        prod = u[bases:, :, None] * u0[:, None, :]
        acc[r] = prod.reshape(bases, P, d, d).mean(axis=0)
    return CovarianceEstimate(z, acc.mean(axis=0), acc.std(axis=0, ddof=1) / math.sqrt(replicas), replicas)


def write_covariance_csv(path, points, oracle, empirical=None, stderr=None) -> None:
    """Rows (z_1..z_d, Q_ab..., Qhat_ab..., se_ab...) for each test point."""
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    idx = [(a, b) for a in range(d) for b in range(d)]
    header = [f"z{i + 1}" for i in range(d)] + [f"Q{a + 1}{b + 1}" for a, b in idx]
    blocks = [oracle]
    if empirical is not None:
        header += [f"Qhat{a + 1}{b + 1}" for a, b in idx]
        blocks.append(empirical)
    if stderr is not None:
        header += [f"se{a + 1}{b + 1}" for a, b in idx]
        blocks.append(stderr)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for i, z in enumerate(points):
            row = [repr(float(v)) for v in z]
            for blk in blocks:
                row += [repr(float(blk[i][a, b])) for a, b in idx]
            w.writerow(row)
