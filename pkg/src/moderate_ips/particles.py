"""Euler-Maruyama integration of the moderately interacting particle system.

    dX^i = (1/N) sum_j (K_eps * V^N)(X^i - X^j) dt + sum_k sigma_k(X^i) dW^k

Two drift engines are provided.  ``DirectDrift`` sums the pairwise
interaction G = K_eps * V^N from a radial table (O(N^2)); ``GridDrift``
deposits the particles through V^N onto a grid, which gives the mollified
empirical measure, convolves with K_eps by FFT and interpolates back.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft
from scipy import ndimage
from scipy.interpolate import CubicSpline

from . import rng as rng_mod
from .errors import (DimensionMismatch, NonFinite, OutOfTable, QuadratureFailure,
                     SimulationError)
from .fields import SCHEMA_VERSION, GridSpec, check_resolution, deposit
from .kernels import RegularizedKernel, _composite, _profile_quadrature
from .mollifiers import Mollifier
from .noise import sample_shared_increments, velocity_increment


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray = field(repr=False)
    time: float = 0.0
    seed: int = 0
    replica: int = 0

    def __post_init__(self):
        X = np.asarray(self.positions, dtype=float)
        if X.ndim != 2:
            raise DimensionMismatch("positions must have shape (N, d)")
        if not np.all(np.isfinite(X)):
            raise NonFinite("particle positions must be finite")
        object.__setattr__(self, "positions", X)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def init_ensemble(N: int, omega0, seed: int, replica: int = 0) -> ParticleEnsemble:
    """N i.i.d. draws from ``omega0`` (anything with ``sample(rng, N)``)."""
    if N < 1:
        raise ValueError("N must be positive")
    g = rng_mod.stream(seed, rng_mod.INITIAL_POSITIONS, N, replica)
    return ParticleEnsemble(omega0.sample(g, N), 0.0, seed, replica)


def empirical_moment(ens, order: float) -> float:
    """(1/N) sum |X^i|^order."""
    if order < 1:
        raise ValueError("order must be at least 1")
    X = getattr(ens, "positions", ens)
    return float(np.mean(np.linalg.norm(X, axis=1) ** order))


# ---------------------------------------------------------------------------
# G = K_eps * V^N


def _radial_convolution(f, a, g, b, d, r, level):
    """(f * g)(r) for radial f (support a) and g (support b) on R^d.

    The angular integral only runs over the arc where g is nonzero, so the
    integrand never crosses the edge of g's support.
    """
    panels = 2 ** level
    u, wu = _composite(0.0, a, panels, 48)
    r = np.atleast_1d(r)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cmin = np.where(r * u > 0, (r * r + u * u - b * b) / (2 * r * u), -1.0)
    cmin = np.clip(cmin, -1.0, 1.0)  # (n_r, n_u)
    if d == 2:
        th, wth = _composite(np.zeros_like(cmin), np.arccos(cmin), panels, 48)
        dist = np.sqrt(np.maximum(r[..., None] ** 2 + u[None, :, None] ** 2
                                  - 2 * r[..., None] * u[None, :, None] * np.cos(th), 0.0))
        inner = 2.0 * np.sum(g(dist) * wth, axis=2)
        return np.sum(f(u) * u * wu * inner, axis=1)
    c, wc = _composite(cmin, np.ones_like(cmin), panels, 48)
    dist = np.sqrt(np.maximum(r[..., None] ** 2 + u[None, :, None] ** 2
                              - 2 * r[..., None] * u[None, :, None] * c, 0.0))
    inner = 2.0 * math.pi * np.sum(g(dist) * wc, axis=2)
    return np.sum(f(u) * u * u * wu * inner, axis=1)


def _adaptive_radial_convolution(f, a, g, b, d, r, tol=1e-8, max_level=4):
    prev = _radial_convolution(f, a, g, b, d, r, 0)
    for level in range(1, max_level + 1):
        cur = _radial_convolution(f, a, g, b, d, r, level)
        if np.max(np.abs(cur - prev)) <= tol * max(np.max(np.abs(cur)), 1e-300):
            return cur
        prev = cur
    raise QuadratureFailure("radial convolution did not converge")


@dataclass(frozen=True)
class InteractionTable:
    """Radial profile of G = K_eps * V^N: G(x) = g(|x|) / |x| * direction(x)."""

    kernel: RegularizedKernel
    VN: Mollifier
    table: np.ndarray = field(repr=False)
    extent: float
    _spline: CubicSpline = field(repr=False, compare=False)

    def magnitude(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r > self.extent):
            raise OutOfTable(f"pairwise distance {np.max(r):.4g} exceeds the table extent {self.extent:.4g}")
        out = np.empty_like(r)
        near = r <= self.table[-1, 0]
        out[near] = self._spline(r[near])
        rf = r[~near]
        out[~near] = self.kernel.kind.profile(rf) * rf
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        gmag = self.magnitude(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(r > 0, gmag / np.where(r > 0, r, 1.0), 0.0)
        return s[..., None] * self.kernel.kind.direction(x)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.table[:, 1])))


def build_interaction_table(kernel: RegularizedKernel, VN: Mollifier, resolution: int = 256,
                            extent: float | None = None) -> InteractionTable:
    """Tabulate G = K_eps * V^N.

    psi = rho_eps * V^N is built by radial quadrature.  For harmonic kernels
    G = K * psi follows from the shell theorem and equals K beyond the
    support of psi, so the table extent is unlimited.  Otherwise G is
    computed by the same polar quadrature as K_eps out to 20 support radii
    and pairwise distances beyond ``extent`` raise OutOfTable.
    """
    d = kernel.d
    if VN.d != d:
        raise DimensionMismatch("V^N and the kernel live in different dimensions")
    rho = kernel.mollifier
    e, a = rho.support_radius, VN.support_radius
    R = e + a
    rr = np.linspace(0.0, R, resolution + 1)
    psi = np.zeros_like(rr)
    psi[:-1] = _adaptive_radial_convolution(rho.radial, e, VN.radial, a, d, rr[:-1])
    psi_spline = CubicSpline(rr, psi, bc_type=((1, 0.0), (1, 0.0)))
    if kernel.kind.harmonic:
        # mass of psi inside radius r, normalized to 1 at the support edge
        mass = CubicSpline(rr, psi * rr ** (d - 1)).antiderivative()(rr)
        mass /= mass[-1]
        r = rr
        g = np.zeros_like(r)
        g[1:] = kernel.kind.profile(r[1:]) * r[1:] * mass[1:]
        ext = math.inf if extent is None else float(extent)
    else:
        R_far = 20.0 * R
        r = np.concatenate([rr, np.geomspace(R, R_far, 129)[1:]])
        g = np.zeros_like(r)

        def density(q):
            return np.where(q < R, psi_spline(np.minimum(q, R)), 0.0)

        g[1:] = _profile_general(kernel.kind, R, r[1:], density)
        ext = R_far if extent is None else min(float(extent), R_far)
    spline = CubicSpline(r, g, bc_type=((2, 0.0), "not-a-knot"))
    return InteractionTable(kernel, VN, np.column_stack([r, g]), ext, spline)


def _profile_general(kind, support, r, density, tol=1e-8, max_level=4):
    """K * density for a radial density of the given support (polar quadrature)."""
    def level_eval(level):
        step_ = max(1, 64 // 4 ** level)
        return np.concatenate([_profile_quadrature(kind, support, r[i:i + step_], level, density=density)
                               for i in range(0, len(r), step_)])

    prev = level_eval(0)
    for level in range(1, max_level + 1):
        cur = level_eval(level)
        if np.max(np.abs(cur - prev)) <= tol * max(np.max(np.abs(cur)), 1e-300):
            return cur
        prev = cur
    raise QuadratureFailure("interaction table quadrature did not converge")


# ---------------------------------------------------------------------------
# drift engines


class DirectDrift:
    """Exact pairwise sum (1/N) sum_j G(X_i - X_j), self-term included."""

    def __init__(self, table: InteractionTable, chunk: int = 256):
        self.table = table
        self.chunk = chunk

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        N = len(X)
        out = np.empty_like(X)
        for s in range(0, N, self.chunk):
            diff = X[s:s + self.chunk, None, :] - X[None, :, :]
            out[s:s + self.chunk] = np.sum(self.table(diff), axis=1) / N
        return out


class GridDrift:
    """(K_eps * omega^N)(X_i) with omega^N deposited on ``grid``.

    The free-space convolution uses the doubled-box (Hockney) trick: K_eps
    is sampled at all offsets j h, |j| < n, on a 2n periodic grid, so the
    circular convolution reproduces the linear one on the original box.
    """

    def __init__(self, kernel: RegularizedKernel, VN: Mollifier, grid: GridSpec):
        if grid.d != kernel.d or VN.d != kernel.d:
            raise DimensionMismatch("kernel, V^N and grid dimensions differ")
        check_resolution(grid, kernel.epsilon * kernel.r_rho, "epsilon")
        check_resolution(grid, VN.support_radius, "V^N")
        self.kernel, self.VN, self.grid = kernel, VN, grid
        n, d, h = grid.n, grid.d, grid.h
        j = np.fft.fftfreq(2 * n, d=1.0 / (2 * n))  # 0..n-1, -n..-1
        offs = np.stack(np.meshgrid(*([j * h] * d), indexing="ij"), axis=-1)
        K = kernel(offs)
        self._shape = (2 * n,) * d
        self._Khat = [sfft.rfftn(K[..., c]) for c in range(d)]

    def velocity(self, omega):
        """K_eps * omega on the grid (omega values, shape (n,)*d)."""
        n, d = self.grid.n, self.grid.d
        pad = np.zeros(self._shape)
        pad[(slice(0, n),) * d] = omega
        wh = sfft.rfftn(pad)
        cv = self.grid.cell_volume
        comps = [sfft.irfftn(wh * Kh, s=self._shape)[(slice(0, n),) * d] * cv for Kh in self._Khat]
        return np.stack(comps, axis=-1)

    def omega(self, X):
        return deposit(X, self.VN, self.grid)

    def interpolate(self, u, X):
        coords = ((np.asarray(X) + self.grid.L) / self.grid.h - 0.5).T
        return np.stack([ndimage.map_coordinates(u[..., c], coords, order=3, mode="nearest")
                         for c in range(self.grid.d)], axis=-1)

    def __call__(self, X):
        return self.interpolate(self.velocity(self.omega(X)), X)


# ---------------------------------------------------------------------------
# time stepping


def step(ens: ParticleEnsemble, dt: float, drift=None, noise=None, incs=None) -> ParticleEnsemble:
    """One Euler-Maruyama step with shared noise increments."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = ens.positions
    Xn = X.copy()
    if drift is not None:
        Xn += drift(X) * dt
    if noise is not None:
        if incs is None:
            raise ValueError("noise given without increments")
        Xn += velocity_increment(noise, incs, X)
    if not np.all(np.isfinite(Xn)):
        raise NonFinite("non-finite particle position; dt is probably too large")
    return ParticleEnsemble(Xn, ens.time + dt, ens.seed, ens.replica)


def _steps(T, dt):
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return n


def simulate(ens: ParticleEnsemble, dt: float, T: float, drift=None, noise=None,
             snapshot_times=None, observer=None, observe_every: int = 1):
    """Integrate to time T; return [(t, ensemble)] at the snapshot times.

    Noise increments come from the stream keyed by (seed, N, replica) of
    the initial ensemble, so a run is a deterministic function of its
    inputs.  ``observer(step, t, positions)`` is called every
    ``observe_every`` steps including step 0.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_steps = _steps(T, dt) if T > 0 else 0
    times = [0.0, T] if snapshot_times is None else list(snapshot_times)
    want = {}
    for t in times:
        if t < 0 or t > T + 1e-12:
            raise ValueError(f"snapshot time {t} outside [0, T]")
        want.setdefault(int(round(t / dt)) if T > 0 else 0, t)
    g = rng_mod.stream(ens.seed, rng_mod.NOISE_INCREMENTS, ens.N, ens.replica)
    out = []
    cur = ens
    for k in range(n_steps + 1):
        if k in want:
            out.append((want[k], cur))
        if observer is not None and k % observe_every == 0:
            observer(k, k * dt, cur.positions)
        if k == n_steps:
            break
        try:
            incs = sample_shared_increments(noise, dt, g) if noise is not None else None
            cur = step(cur, dt, drift, noise, incs)
        except Exception as exc:
            raise SimulationError(f"step {k} failed: {exc}", step=k, cause=exc) from exc
        cur = replace(cur, time=(k + 1) * dt)
    return out


def write_snapshot_csv(path, ens: ParticleEnsemble) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n# time: {ens.time!r}\n")
        w = csv.writer(fh)
        w.writerow(["particle_id"] + [f"x{i + 1}" for i in range(ens.d)])
        for i, x in enumerate(ens.positions):
            w.writerow([i] + [repr(float(v)) for v in x])


def write_manifest(path, params: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **params}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
