"""Uniform grids, grid fields, the mollified empirical measure and its norms.

A ``GridSpec`` is the box [-L, L]^d split into n cells per axis; samples
live at cell centres.  Densities used as initial data also live here.

Binary layout written by ``GridField.to_binary`` (little endian)::

    8 bytes   magic  b"MIPSGRID"
    uint32    schema version
    uint32    d
    uint32    n
    uint32    components (1 for scalar fields, d for vector fields)
    float64   L
    float64[] values, row major, shape (n,)*d + (components,)
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng as rng_mod
from .errors import DimensionMismatch, InsufficientPoints, MassLeak, ResolutionError
from .mollifiers import Mollifier, ModerateScaling, moderate_potential

SCHEMA_VERSION = 1
_MAGIC = b"MIPSGRID"


@dataclass(frozen=True)
class GridSpec:
    d: int
    L: float
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise DimensionMismatch("d must be positive")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def shape(self):
        return (self.n,) * self.d

    def axis(self):
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        """Cell centres, shape (n,)*d + (d,)."""
        return np.stack(np.meshgrid(*([self.axis()] * self.d), indexing="ij"), axis=-1)

    def wavenumbers(self):
        """Angular wavenumbers, shape (d,) + (n,)*d."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        return np.stack(np.meshgrid(*([k] * self.d), indexing="ij"))

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.d, self.L, self.n * factor)


@dataclass(frozen=True)
class GridField:
    """Scalar (shape (n,)*d) or vector (shape (n,)*d + (d,)) samples."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape not in (self.grid.shape, self.grid.shape + (self.grid.d,)):
            raise DimensionMismatch(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: GridSpec, f) -> "GridField":
        return cls(grid, f(grid.mesh()))

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == self.grid.d + 1

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def lp_norm(self, p: float) -> float:
        v = np.abs(self.values)
        if self.is_vector:
            v = np.sqrt(np.sum(v * v, axis=-1))
        if math.isinf(p):
            return float(np.max(v))
        return float((np.sum(v ** p) * self.grid.cell_volume) ** (1.0 / p))

    def __sub__(self, other: "GridField") -> "GridField":
        if other.grid != self.grid:
            raise DimensionMismatch("fields live on different grids")
        return GridField(self.grid, self.values - other.values)

    def to_csv(self, path) -> None:
        """Flat CSV: x_1..x_d then the value(s)."""
        d = self.grid.d
        pts = self.grid.mesh().reshape(-1, d)
        vals = self.values.reshape(len(pts), -1)
        names = ["value"] if vals.shape[1] == 1 else [f"v{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(d)] + names)
            for x, v in zip(pts, vals):
                w.writerow([repr(float(a)) for a in x] + [repr(float(b)) for b in v])

    def to_binary(self, path) -> None:
        comps = self.grid.d if self.is_vector else 1
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIId", SCHEMA_VERSION, self.grid.d, self.grid.n, comps, self.grid.L))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError(f"{path} is not a grid field file")
            _, d, n, comps, L = struct.unpack("<IIIId", fh.read(24))
            data = np.frombuffer(fh.read(), dtype="<f8")
        grid = GridSpec(d, L, n)
        shape = grid.shape + ((comps,) if comps > 1 else ())
        return cls(grid, data.reshape(shape).copy())


# ---------------------------------------------------------------------------
# initial densities


@dataclass(frozen=True)
class GaussianDensity:
    """Centred Gaussian with per-axis standard deviations ``sigma``."""

    d: int = 2
    sigma: tuple = (1.0,)

    def __post_init__(self):
        s = tuple(float(v) for v in np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.d,)))
        if min(s) <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "sigma", s)

    @property
    def isotropic(self) -> bool:
        return len(set(self.sigma)) == 1

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = np.asarray(self.sigma)
        q = np.sum((x / s) ** 2, axis=-1)
        return np.exp(-0.5 * q) / ((2 * math.pi) ** (self.d / 2) * np.prod(s))

    def sample(self, rng, N):
        return rng.normal(size=(N, self.d)) * np.asarray(self.sigma)

    def moment(self, order: float) -> float:
        """E|X|^order, closed form for the isotropic case."""
        if not self.isotropic:
            raise ValueError("closed-form moments need an isotropic Gaussian")
        s = self.sigma[0]
        return s ** order * 2 ** (order / 2) * math.gamma((self.d + order) / 2) / math.gamma(self.d / 2)

    def entropy(self) -> float:
        return 0.5 * self.d * math.log(2 * math.pi * math.e) + float(np.sum(np.log(self.sigma)))


@dataclass(frozen=True)
class BumpDensity:
    """The standard bump rescaled to the given support radius."""

    d: int = 2
    radius: float = 2.0

    @property
    def mollifier(self) -> Mollifier:
        return Mollifier(self.d, self.radius)

    def pdf(self, x):
        return self.mollifier(x)

    def _radius_quantile(self):
        u = np.linspace(0.0, 1.0, 1025)
        cdf = np.maximum.accumulate(self.mollifier.mass_within(u * self.radius))
        cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
        cdf, keep = np.unique(cdf, return_index=True)
        return PchipInterpolator(cdf, u[keep] * self.radius)

    def sample(self, rng, N):
        q = _bump_quantile(self.d, float(self.radius))
        r = q(rng.random(N))
        g = rng.normal(size=(N, self.d))
        return r[:, None] * g / np.linalg.norm(g, axis=1, keepdims=True)


_QUANTILES: dict = {}


def _bump_quantile(d, radius):
    key = (d, radius)
    if key not in _QUANTILES:
        _QUANTILES[key] = BumpDensity(d, radius)._radius_quantile()
    return _QUANTILES[key]


# ---------------------------------------------------------------------------
# mollified empirical measure


def check_resolution(grid: GridSpec, radius: float, what: str = "support") -> None:
    if 2 * radius / grid.h < 4:
        raise ResolutionError(
            f"{what} of radius {radius:.4g} spans fewer than 4 cells of size {grid.h:.4g}")


def deposit(positions, VN: Mollifier, grid: GridSpec, weights=None, chunk: int = 1024):
    """sum_i w_i V^N(x - X_i) at cell centres (weights default to 1/N).

    Each particle's stencil is rescaled so that its discrete mass is exactly
    w_i; cells outside the box count towards that mass, so leakage shows up
    as a mass deficit.
    """
    X = np.asarray(positions, dtype=float)
    N, d = X.shape
    if d != grid.d:
        raise DimensionMismatch(f"particle dimension {d} != grid dimension {grid.d}")
    if weights is None:
        weights = np.full(N, 1.0 / N)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[:, None]
    h, n, L = grid.h, grid.n, grid.L
    a2 = VN.support_radius ** 2
    reach = int(math.ceil(VN.support_radius / h)) + 1
    offs = np.arange(-reach, reach + 1)
    size = n ** d
    out = np.zeros((size + 1, weights.shape[1]))  # last bin collects out-of-box cells
    for s in range(0, N, chunk):
        Xc = X[s:s + chunk]
        m = len(Xc)
        base = np.floor((Xc + L) / h).astype(np.int64)
        r2 = np.zeros((m,) + (len(offs),) * d)
        flat = np.zeros((m,) + (len(offs),) * d, dtype=np.int64)
        valid = np.ones((m,) + (len(offs),) * d, dtype=bool)
        for ax in range(d):
            idx = base[:, ax:ax + 1] + offs  # (m, S)
            dx = -L + (idx + 0.5) * h - Xc[:, ax:ax + 1]
            shape = [m] + [1] * d
            shape[1 + ax] = len(offs)
            r2 += (dx * dx).reshape(shape)
            flat = flat * n + idx.reshape(shape)
            valid &= ((idx >= 0) & (idx < n)).reshape(shape)
        inside = r2 < a2
        val = np.zeros_like(r2)
        val[inside] = np.exp(-1.0 / (1.0 - r2[inside] / a2))
        val = val.reshape(m, -1)
        val /= np.sum(val, axis=1, keepdims=True) * grid.cell_volume
        flat = np.where(valid, flat, size).reshape(m, -1)
        for c in range(weights.shape[1]):
            out[:, c] += np.bincount(flat.ravel(), weights=(val * weights[s:s + chunk, c][:, None]).ravel(),
                                     minlength=size + 1)
    out = out[:size].reshape(grid.shape + (weights.shape[1],))
    return out[..., 0] if out.shape[-1] == 1 else out


def mollify(positions, VN: Mollifier, grid: GridSpec) -> GridField:
    """omega^N = V^N * S^N sampled at cell centres."""
    check_resolution(grid, VN.support_radius, "V^N")
    X = getattr(positions, "positions", positions)
    f = GridField(grid, deposit(X, VN, grid))
    m = f.mass()
    if m < 1 - 1e-4:
        raise MassLeak(f"mollified measure has mass {m:.6f} inside the box")
    return f


def norm_l1lp(f: GridField, p: float) -> float:
    """max(||f||_1, ||f||_p)."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    return max(f.lp_norm(1.0), f.lp_norm(p))


def entropy_plugin(f: GridField) -> float:
    """sum f log f h^d with 0 log 0 = 0; values below 1e-300 count as 0."""
    v = f.values
    pos = v > 1e-300
    return float(np.sum(v[pos] * np.log(v[pos])) * f.grid.cell_volume)


# ---------------------------------------------------------------------------
# initial-data rate


class ZetaReport(NamedTuple):
    N: tuple
    zeta: tuple
    stderr: tuple
    lambda_fit: float
    log_constant: float


def zeta_single(omega0, N: int, scaling: ModerateScaling, grid: GridSpec, replicas: int,
                seed: int, m: float = 4.0, p: float = 4.0, moll: Mollifier | None = None):
    """(zeta_N, standard error, per-replica norms) for one particle count."""
    moll = moll or Mollifier(grid.d)
    VN = moderate_potential(moll, scaling)
    ref = GridField.from_function(grid, omega0.pdf)
    norms = np.empty(replicas)
    for r in range(replicas):
        g = rng_mod.stream(seed, rng_mod.ZETA, N, r)
        X = omega0.sample(g, N)
        norms[r] = norm_l1lp(mollify(X, VN, grid) - ref, p)
    mom = norms ** m
    zeta = float(np.mean(mom) ** (1.0 / m))
    # delta method on the m-th root
    se = float(np.std(mom, ddof=1) / math.sqrt(replicas) / (m * zeta ** (m - 1))) if replicas > 1 else 0.0
    return zeta, se, norms


def zeta_estimate(omega0, Ns, beta: float, grid: GridSpec, replicas: int = 64, seed: int = 0,
                  m: float = 4.0, p: float = 4.0, strict: bool = True) -> ZetaReport:
    """zeta_N = (E ||omega^N_0 - omega_0||^m)^(1/m) over a range of N and the fitted rate."""
    if replicas < 32:
        raise InsufficientPoints("zeta_estimate needs at least 32 replicas")
    Ns = sorted(int(n) for n in Ns)
    zs, ses = [], []
    for N in Ns:
        sc = ModerateScaling(beta, N, m=m, p=p, d=grid.d, strict=strict)
        z, se, _ = zeta_single(omega0, N, sc, grid, replicas, seed, m, p)
        zs.append(z)
        ses.append(se)
    if len(Ns) >= 2:
        slope, icpt = np.polyfit(np.log(Ns), np.log(zs), 1)
    else:
        slope, icpt = float("nan"), float("nan")
    return ZetaReport(tuple(Ns), tuple(zs), tuple(ses), float(-slope), float(icpt))
