"""Pseudo-spectral solver for the mild form of the limit equation

    d_t w + div((K * w) w) = nu Lap w

on a periodic box that stands in for R^d (the box must be padded so the
solution is negligible at its edge).  One step is exponential Euler:

    w_hat <- exp(-nu dt |xi|^2) (w_hat - dt i xi . F_hat),   F = (K * w) w

which is the left-point rule applied to the Duhamel integral.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from .errors import BlowUp, DimensionMismatch
from .fields import GridField, GridSpec
from .kernels import KernelKind, RegularizedKernel


@dataclass(frozen=True)
class PdeConfig:
    """``kernel`` is None (pure heat), a KernelKind (exact symbol) or a
    RegularizedKernel (symbol times the mollifier's Fourier transform)."""

    nu: float
    grid: GridSpec
    dt: float
    T: float
    kernel: object = None
    blow_up_threshold: float | None = None
    blow_up_factor: float = 1e6
    snapshot_times: tuple | None = None
    store_every: int = 1
    dealias: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        k = self.kernel
        if k is not None and not isinstance(k, (KernelKind, RegularizedKernel)):
            raise TypeError("kernel must be None, a KernelKind or a RegularizedKernel")
        if k is not None and k.d != self.grid.d:
            raise DimensionMismatch("kernel and grid dimensions differ")

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}")
        return n


class _Spectral:
    """Cached wavenumber arrays for one grid."""

    _cache: dict = {}

    def __new__(cls, grid: GridSpec):
        obj = cls._cache.get(grid)
        if obj is None:
            obj = super().__new__(cls)
            obj._init(grid)
            cls._cache[grid] = obj
        return obj

    def _init(self, grid):
        self.grid = grid
        n, d, h = grid.n, grid.d, grid.h
        k_full = 2 * np.pi * np.fft.fftfreq(n, d=h)
        k_half = 2 * np.pi * np.fft.rfftfreq(n, d=h)
        axes = [k_full] * (d - 1) + [k_half]
        self.xi = np.stack(np.meshgrid(*axes, indexing="ij"))
        self.k2 = np.sum(self.xi ** 2, axis=0)
        # derivative symbols drop the Nyquist mode so results stay real
        nyq = np.pi / h
        self.dxi = np.where(np.abs(self.xi) >= nyq * (1 - 1e-12), 0.0, self.xi)
        cut = (2.0 / 3.0) * nyq
        self.dealias = np.all(np.abs(self.xi) <= cut, axis=0)
        self.shape = grid.shape


def _symbol(kernel, sp: _Spectral):
    if kernel is None:
        return None
    sym = kernel.fourier_symbol(sp.dxi)
    return sym


def heat_propagate(f: GridField, t: float, nu: float) -> GridField:
    """e^{t nu Lap} f by Fourier multiplication; t = 0 returns f unchanged."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return GridField(f.grid, f.values.copy())
    sp = _Spectral(f.grid)
    fh = sfft.rfftn(f.values)
    return GridField(f.grid, sfft.irfftn(fh * np.exp(-nu * t * sp.k2), s=sp.shape))


def velocity_from_vorticity(f: GridField, kernel) -> GridField:
    """K * f as a vector field (zero for kernel None)."""
    sp = _Spectral(f.grid)
    d = f.grid.d
    if kernel is None:
        return GridField(f.grid, np.zeros(f.grid.shape + (d,)))
    fh = sfft.rfftn(f.values)
    sym = _symbol(kernel, sp)
    u = np.stack([sfft.irfftn(sym[c] * fh, s=sp.shape) for c in range(d)], axis=-1)
    return GridField(f.grid, u)


class _Stepper:
    def __init__(self, cfg: PdeConfig):
        self.cfg = cfg
        self.sp = _Spectral(cfg.grid)
        self.sym = _symbol(cfg.kernel, self.sp)
        self.E = np.exp(-cfg.nu * cfg.dt * self.sp.k2)

    def flux_div(self, fh):
        """Fourier coefficients of div((K * f) f)."""
        if self.sym is None:
            return np.zeros_like(fh)
        sp = self.sp
        f = sfft.irfftn(fh, s=sp.shape)
        div = np.zeros_like(fh)
        for c in range(sp.grid.d):
            u = sfft.irfftn(self.sym[c] * fh, s=sp.shape)
            Fh = sfft.rfftn(u * f)
            if self.cfg.dealias:
                Fh = Fh * sp.dealias
            div += 1j * sp.dxi[c] * Fh
        return div

    def advance(self, fh):
        return self.E * (fh - self.cfg.dt * self.flux_div(fh))


def step_mild(f: GridField, dt: float, cfg: PdeConfig) -> GridField:
    """One exponential-Euler step of size dt."""
    thr = cfg.blow_up_threshold
    if thr is not None and np.max(np.abs(f.values)) >= thr:
        raise BlowUp(f"sup norm {np.max(np.abs(f.values)):.4g} exceeds {thr:.4g}")
    st = _Stepper(cfg if dt == cfg.dt else _with_dt(cfg, dt))
    fh = st.advance(sfft.rfftn(f.values))
    return GridField(f.grid, sfft.irfftn(fh, s=st.sp.shape))


def _with_dt(cfg, dt):
    from dataclasses import replace

    return replace(cfg, dt=dt, T=dt)


class PdeSolution(NamedTuple):
    times: tuple
    fields: tuple
    status: str
    blowup_time: float | None
    stored_times: tuple
    stored: tuple


def solve(omega0: GridField, cfg: PdeConfig) -> PdeSolution:
    """Integrate to cfg.T.

    Returns snapshot fields at cfg.snapshot_times (default: every stored
    step) plus every ``store_every``-th step for residual checks.  If the
    sup-norm guard trips the run stops and ``status`` is "blow_up".
    """
    if omega0.grid != cfg.grid:
        raise DimensionMismatch("initial field and config use different grids")
    n = cfg.n_steps
    thr = cfg.blow_up_threshold
    if thr is None:
        thr = cfg.blow_up_factor * float(np.max(np.abs(omega0.values)))
    snaps = None
    if cfg.snapshot_times is not None:
        snaps = {int(round(t / cfg.dt)): float(t) for t in cfg.snapshot_times}
    st = _Stepper(cfg)
    fh = sfft.rfftn(omega0.values)
    times, fields, st_times, stored = [], [], [], []
    status, t_blow = "ok", None
    for k in range(n + 1):
        f = omega0.values if k == 0 else sfft.irfftn(fh, s=st.sp.shape)
        t = k * cfg.dt
        if k % cfg.store_every == 0 or k == n:
            st_times.append(t)
            stored.append(GridField(cfg.grid, f))
        if snaps is not None and k in snaps:
            times.append(snaps[k])
            fields.append(GridField(cfg.grid, f))
        if np.max(np.abs(f)) >= thr or not np.all(np.isfinite(f)):
            status, t_blow = "blow_up", t
            break
        if k < n:
            fh = st.advance(fh)
    if snaps is None:
        times, fields = list(st_times), list(stored)
    return PdeSolution(tuple(times), tuple(fields), status, t_blow, tuple(st_times), tuple(stored))


def mild_residual(sol: PdeSolution, cfg: PdeConfig) -> float:
    """L^1 norm of w_T - e^{TA} w_0 + int_0^T div e^{(T-s)A}((K*w_s) w_s) ds.

    The time integral uses the trapezoid rule over the stored snapshots, so
    the residual measures the first-order error of the left-point scheme.
    """
    ts = np.asarray(sol.stored_times)
    if len(ts) < 2:
        return 0.0
    st = _Stepper(cfg)
    sp = st.sp
    T = ts[-1]
    w0h = sfft.rfftn(sol.stored[0].values)
    acc = sfft.rfftn(sol.stored[-1].values) - np.exp(-cfg.nu * T * sp.k2) * w0h
    if st.sym is not None:
        dts = np.diff(ts)
        wts = np.zeros_like(ts)
        wts[:-1] += dts / 2
        wts[1:] += dts / 2
        for t, f, w in zip(ts, sol.stored, wts):
            acc += w * np.exp(-cfg.nu * (T - t) * sp.k2) * st.flux_div(sfft.rfftn(f.values))
    r = sfft.irfftn(acc, s=sp.shape)
    return float(np.sum(np.abs(r)) * cfg.grid.cell_volume)


def lp_series(sol: PdeSolution, p: float):
    return np.array([f.lp_norm(p) for f in sol.fields])
