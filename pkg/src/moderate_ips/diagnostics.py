"""Experiments built on the particle system, the PDE solver and the noise model."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from . import rng as rng_mod
from .errors import InsufficientPoints, InvalidZeta, QuadratureTooCoarse
from .fields import (GaussianDensity, GridField, GridSpec, deposit, entropy_plugin, mollify,
                     norm_l1lp, zeta_single)
from .kernels import KernelKind, biot_savart, build_regularized
from .mollifiers import Mollifier, ModerateScaling, moderate_potential
from .noise import build_noise, covariance_quadrature, frobenius_profile, nu_theoretical
from .particles import DirectDrift, GridDrift, build_interaction_table, init_ensemble, simulate
from .pde import PdeConfig, _Spectral, solve


# ---------------------------------------------------------------------------
# small utilities


def epsilon_schedule(N: int, zeta_N: float, p: float, d: int, theta: float = 1.0) -> float:
    """[min(theta log N, -theta log zeta_N)]^(-p'/(2d))."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not 0 < zeta_N < 1:
        raise InvalidZeta(f"zeta_N must lie in (0, 1), got {zeta_N}")
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not p > 1:
        raise ValueError("p must exceed 1")
    pp = p / (p - 1.0)
    base = min(theta * math.log(N), -theta * math.log(zeta_N))
    return base ** (-pp / (2 * d))


def mittag_leffler_half(z: float) -> float:
    """E_{1/2}(z) = exp(z^2) (1 + (2/sqrt(pi)) int_0^z exp(-t^2) dt), z >= 0."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    val, _ = integrate.quad(lambda t: math.exp(-t * t), 0.0, z, epsabs=0.0, epsrel=1e-13)
    out = math.exp(z * z) * (1.0 + 2.0 / math.sqrt(math.pi) * val)
    if out > 2.0 * math.exp(z * z) * (1 + 1e-15):
        raise AssertionError("E_1/2(z) <= 2 exp(z^2) violated")
    return out


def mittag_leffler_series(z: float, alpha: float = 0.5, terms: int = 60) -> float:
    """Truncated series sum_k z^k / Gamma(k alpha + 1)."""
    k = np.arange(terms)
    logs = k * math.log(z) - special.gammaln(k * alpha + 1) if z > 0 else None
    if logs is None:
        return 1.0
    return float(np.sum(np.exp(logs)))


class EntropyTrend(NamedTuple):
    values: tuple
    initial: float
    bounded: bool
    decreasing: bool


def entropy_trend(fields, tol: float = 0.1, reference: float | None = None) -> EntropyTrend:
    """Plug-in entropy per snapshot and whether it stays below H(w_0) + tol."""
    vals = tuple(entropy_plugin(f) for f in fields)
    h0 = vals[0] if reference is None else reference
    bounded = all(v <= h0 + tol for v in vals)
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    return EntropyTrend(vals, h0, bounded, decreasing)


# ---------------------------------------------------------------------------
# stochastic convolution


def _quantize(x):
    # round to a dyadic grid so that sums and differences are exact
    return np.round(x * 2.0 ** 44) / 2.0 ** 44


class ZEstimate(NamedTuple):
    times: tuple
    norms: tuple
    summary: float
    fields: tuple
    terms: tuple  # (heat part, Duhamel part, omega^N) per time, already quantized
    coarse_change: float


class StochasticConvolution:
    """Observer computing Z^N_t = e^{tA} w^N_0 - D_t - w^N_t along a run.

    D_t is the left-point Duhamel sum of div e^{(t-s)A} F_s with
    F = V^N * ((K_eps * w^N) S^N), accumulated recursively in Fourier space
    over observed steps.  A second accumulator using every other
    observation provides the refinement check.
    """

    def __init__(self, grid: GridSpec, VN: Mollifier, drift: GridDrift | None, nu: float, dt_obs: float,
                 p: float = 4.0, keep_fields: bool = False):
        self.grid, self.VN, self.drift = grid, VN, drift
        self.nu, self.dt_obs, self.p = nu, dt_obs, p
        self.sp = _Spectral(self.grid)
        self.E1 = np.exp(-nu * dt_obs * self.sp.k2)
        self.E2 = self.E1 * self.E1
        self.keep = keep_fields
        self.count = 0
        self.times, self.norms, self.fields, self.terms, self.coarse = [], [], [], [], []

    def _div_flux(self, X, omega):
        out = np.zeros(self.sp.k2.shape, dtype=complex)
        if self.drift is None:
            return out
        u = self.drift.interpolate(self.drift.velocity(omega), X)
        N = len(X)
        F = deposit(X, self.VN, self.grid, weights=u / N)
        for c in range(self.grid.d):
            out += 1j * self.sp.dxi[c] * sfft.rfftn(F[..., c])
        return out

    def __call__(self, step, t, X):
        omega = deposit(X, self.VN, self.grid)
        wh = sfft.rfftn(omega)
        if self.count == 0:
            self.w0h = wh
            self.D = np.zeros_like(wh)
            self.D2 = np.zeros_like(wh)
        heat = sfft.irfftn(np.exp(-self.nu * t * self.sp.k2) * self.w0h, s=self.sp.shape)
        duh = sfft.irfftn(self.D, s=self.sp.shape)
        a, b, c = _quantize(heat), _quantize(duh), _quantize(omega)
        z = a - b - c
        zf = GridField(self.grid, z)
        self.times.append(t)
        self.norms.append(norm_l1lp(zf, self.p))
        if self.keep:
            self.fields.append(zf)
            self.terms.append((a, b, c))
        if self.count % 2 == 0:
            z2 = a - _quantize(sfft.irfftn(self.D2, s=self.sp.shape)) - c
            self.coarse.append((zf.lp_norm(1.0), GridField(self.grid, z2 - z).lp_norm(1.0)))
        # advance the accumulators past this observation
        dv = self._div_flux(X, omega)
        self.D = self.E1 * (self.D + self.dt_obs * dv)
        if self.count % 2 == 0:
            self.D2 = self.E2 * (self.D2 + 2 * self.dt_obs * dv)
        self.count += 1

    def result(self, check: bool = True, threshold: float = 0.2) -> ZEstimate:
        rel = 0.0
        tot = sum(a for a, _ in self.coarse)
        if tot > 0:
            rel = sum(b for _, b in self.coarse) / tot
        if check and rel > threshold:
            raise QuadratureTooCoarse(
                f"halving the observation density changes Z by {rel:.1%} (> {threshold:.0%})")
        return ZEstimate(tuple(self.times), tuple(self.norms), float(max(self.norms)),
                         tuple(self.fields), tuple(self.terms), rel)


def stochastic_convolution_estimate(ens, dt, T, grid: GridSpec, VN: Mollifier, drift: GridDrift | None = None,
                                    noise=None, every: int = 4, p: float = 4.0, keep_fields: bool = False,
                                    check: bool = True) -> ZEstimate:
    """Run the particle system and return Z^N along the trajectory.

    ``drift`` None means K = 0.  nu is the noise's nu, or 0 without noise.
    """
    if every * dt > 1.0 / 16 + 1e-12:
        raise QuadratureTooCoarse("need at least 16 observations per unit time")
    nu = noise.nu if noise is not None else 0.0
    obs = StochasticConvolution(grid, VN, drift, nu, every * dt, p, keep_fields)
    simulate(ens, dt, T, drift, noise, snapshot_times=[T], observer=obs, observe_every=every)
    return obs.result(check=check)


def reconstruction_exact(est: ZEstimate) -> bool:
    """w^N_t == e^{tA} w^N_0 - D_t - Z_t bit for bit at every stored time."""
    if not est.terms:
        raise ValueError("estimate was computed without keep_fields=True")
    return all(np.array_equal(a - b - z.values, c) for (a, b, c), z in zip(est.terms, est.fields))


def fit_exponent(Ns, values) -> float:
    """Least-squares slope of -log(value) against log N."""
    x, y = np.log(np.asarray(Ns, float)), np.log(np.asarray(values, float))
    if len(x) < 2:
        raise InsufficientPoints("need at least two points to fit a rate")
    return float(-np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# force covariance


class CovarianceDecay(NamedTuple):
    n_scales: tuple
    means: tuple
    stderr: tuple
    baseline: float
    baseline_stderr: float
    oracle: float


def iid_gaussian_oracle(d, alpha, n_scale, sigma, ell, nodes=4000):
    """E|Q(X - Y)|_F^ell for X, Y i.i.d. N(0, sigma^2 I) by quadrature.

    X - Y ~ N(0, 2 sigma^2 I) and |Q|_F is radial, so the 2d-dimensional
    integral reduces to one dimension in rho = |X - Y|.
    """
    s2 = 2 * sigma * sigma
    rmax = math.sqrt(s2) * 12.0
    x, w = np.polynomial.legendre.leggauss(64)
    edges = np.linspace(0.0, rmax, nodes // 64 + 1)
    a, b = edges[:-1], edges[1:]
    rho = (a[:, None] + 0.5 * (x + 1) * (b - a)[:, None]).ravel()
    wr = (0.5 * w * (b - a)[:, None]).ravel()
    # density of |Z| for Z ~ N(0, s2 I_d)
    dens = rho ** (d - 1) * np.exp(-rho ** 2 / (2 * s2)) / (s2 ** (d / 2) * 2 ** (d / 2 - 1) * math.gamma(d / 2))
    f = frobenius_profile(d, alpha, math.exp(n_scale) * rho)
    return float(np.sum(wr * dens * f ** ell))


def force_covariance_decay(d: int, alpha: float, n_scales, ell: float = 2.0, replicas: int = 256,
                           N: int = 16, T: float = 0.1, dt: float = 1e-2, M: int = 128,
                           sigma: float = 1.0, epsilon: float = 0.5, beta: float = 1 / 64,
                           seed: int = 0, kernel: KernelKind | None = None,
                           tagged: tuple = (0, 1)) -> CovarianceDecay:
    """E|Q(X^i_T - X^j_T)|_F^ell over replicas, for each noise scale.

    Particles start i.i.d. N(0, sigma^2 I) and move under the regularized
    interaction plus noise at the given scale; ``tagged`` names the pair.
    The baseline (noise off, no dynamics, n_scale = 0) is compared with
    ``iid_gaussian_oracle``, or with |Q(0)|^ell when i == j.
    """
    if ell < 2:
        raise ValueError("ell must be at least 2")
    if replicas < 2:
        raise InsufficientPoints("need at least 2 replicas")
    i, j = tagged
    if not (0 <= i < N and 0 <= j < N):
        raise ValueError("tagged particles must lie in range(N)")
    kernel = kernel or biot_savart()
    omega0 = GaussianDensity(d, sigma)
    VN = moderate_potential(Mollifier(d), ModerateScaling(beta, N, d=d, strict=False))
    drift = DirectDrift(build_interaction_table(build_regularized(kernel, epsilon), VN))

    def qnorm(ns, z):
        return float(np.sum(covariance_quadrature(d, alpha, ns, z) ** 2) ** (ell / 2))

    means, ses = [], []
    for k, ns in enumerate(n_scales):
        vals = np.empty(replicas)
        for r in range(replicas):
            ens = init_ensemble(N, omega0, seed, r)
            noise = build_noise(d, alpha, ns, M, rng_mod.stream(seed, rng_mod.NOISE_CHECK, k, r))
            final = simulate(ens, dt, T, drift, noise)[-1][1]
            vals[r] = qnorm(ns, final.positions[i] - final.positions[j])
        means.append(float(np.mean(vals)))
        ses.append(float(np.std(vals, ddof=1) / math.sqrt(replicas)))
    base = np.empty(replicas)
    for r in range(replicas):
        X = init_ensemble(N, omega0, seed, r).positions
        base[r] = qnorm(0.0, X[i] - X[j])
    if i == j:
        oracle = (2 * nu_theoretical(d, alpha) * math.sqrt(d)) ** ell
    else:
        oracle = iid_gaussian_oracle(d, alpha, 0.0, sigma, ell)
    return CovarianceDecay(tuple(float(s) for s in n_scales), tuple(means), tuple(ses),
                           float(np.mean(base)), float(np.std(base, ddof=1) / math.sqrt(replicas)), oracle)


# ---------------------------------------------------------------------------
# convergence sweep


@dataclass(frozen=True)
class SweepConfig:
    """Inputs of the convergence sweep.

    ``epsilon`` fixes the regularization for every N; when None it follows
    ``epsilon_schedule`` with zeta_N estimated from ``zeta_replicas``
    initial ensembles.  ``n_scale`` None means the coupled setting
    n_scale = log N.  ``kernel`` None means K = 0.  ``pde_pad`` is the factor by which the reference
    PDE box is larger than the particle grid.
    """

    Ns: tuple = (64, 256, 1024, 4096)
    replicas: int = 16
    kernel: KernelKind | None = field(default_factory=biot_savart)
    omega0: object = field(default_factory=lambda: GaussianDensity(2, (1.0, 0.6)))
    beta: float = 1 / 64
    m: float = 4.0
    p: float = 4.0
    T: float = 0.5
    dt: float = 1e-3
    snapshot_every: float = 0.05
    grid: GridSpec = field(default_factory=lambda: GridSpec(2, 10.0, 128))
    pde_pad: int = 2
    alpha: float = 4.0
    M: int = 128
    n_scale: float | None = None
    noise: bool = True
    theta: float = 1.0
    epsilon: float | None = None
    zeta_replicas: int = 32
    seed: int = 0
    strict: bool = True
    threads: int = 1
    z_every: int = 0  # observation stride for Z; 0 disables

    @property
    def d(self) -> int:
        return self.grid.d


class ReplicaRow(NamedTuple):
    N: int
    replica: int
    epsilon: float
    distance: float
    distance_eps: float
    z_summary: float
    error: str


class SweepRow(NamedTuple):
    N: int
    beta: float
    epsilon: float
    zeta: float
    replicas: int
    median: float
    iqr: float
    lm_norm: float
    median_eps: float
    iqr_eps: float
    median_z: float
    wall_time: float


class ConvergenceReport(NamedTuple):
    rows: tuple
    replica_rows: tuple
    fitted_exponent: float
    z_exponent: float


def _reference(cfg: SweepConfig, kernel, nu):
    """PDE solution on the padded box, cropped back to the particle grid."""
    g = cfg.grid
    big = GridSpec(g.d, g.L * cfg.pde_pad, g.n * cfg.pde_pad)
    w0 = GridField.from_function(big, cfg.omega0.pdf)
    times = _snapshot_times(cfg)
    pc = PdeConfig(nu, big, cfg.dt, cfg.T, kernel=kernel, snapshot_times=times, store_every=10 ** 9)
    sol = solve(w0, pc)
    lo = (big.n - g.n) // 2
    sl = (slice(lo, lo + g.n),) * g.d
    return [GridField(g, f.values[sl]) for f in sol.fields]


def _snapshot_times(cfg):
    k = int(round(cfg.snapshot_every / cfg.dt))
    n = int(round(cfg.T / cfg.dt))
    return tuple(i * cfg.dt for i in range(0, n + 1, k)) + (() if n % k == 0 else (cfg.T,))


def _run_replica(cfg, N, r, eps, VN, drift, ref, ref_eps):
    g = cfg.grid
    ens = init_ensemble(N, cfg.omega0, cfg.seed, r)
    noise = None
    if cfg.noise:
        ns = math.log(N) if cfg.n_scale is None else cfg.n_scale
        noise = build_noise(g.d, cfg.alpha, ns, cfg.M,
                            rng_mod.stream(cfg.seed, rng_mod.NOISE_MODES, N, r), coupled=cfg.n_scale is None)
    times = _snapshot_times(cfg)
    zobs = None
    observer = None
    if cfg.z_every:
        nu = noise.nu if noise is not None else 0.0
        zobs = StochasticConvolution(g, VN, drift, nu, cfg.z_every * cfg.dt, cfg.p)
        observer = zobs
    try:
        snaps = simulate(ens, cfg.dt, cfg.T, drift, noise, snapshot_times=times,
                         observer=observer, observe_every=max(cfg.z_every, 1))
        dist, dist_eps = 0.0, 0.0
        for (t, e), w, we in zip(snaps, ref, ref_eps):
            wn = mollify(e, VN, g)
            dist = max(dist, norm_l1lp(wn - w, cfg.p))
            dist_eps = max(dist_eps, norm_l1lp(wn - we, cfg.p))
        zs = zobs.result(check=False).summary if zobs is not None else float("nan")
        return ReplicaRow(N, r, eps, dist, dist_eps, zs, "")
    except Exception as exc:  # recorded, other replicas continue
        return ReplicaRow(N, r, eps, float("nan"), float("nan"), float("nan"), f"{type(exc).__name__}: {exc}")


def convergence_sweep(cfg: SweepConfig) -> ConvergenceReport:
    """Distance between the mollified empirical measure and the PDE solution over N."""
    if cfg.replicas < 1:
        raise ValueError("need at least one replica")
    d = cfg.d
    nu = nu_theoretical(d, cfg.alpha) if cfg.noise else 1e-12
    ref = _reference(cfg, cfg.kernel, nu)
    rows, reps = [], []
    moll = Mollifier(d)
    for N in sorted(cfg.Ns):
        t0 = time.perf_counter()
        sc = ModerateScaling(cfg.beta, N, m=cfg.m, p=cfg.p, d=d, strict=cfg.strict)
        VN = moderate_potential(moll, sc)
        zeta = float("nan")
        if cfg.epsilon is None:
            zeta, _, _ = zeta_single(cfg.omega0, N, sc, cfg.grid, cfg.zeta_replicas, cfg.seed, cfg.m, cfg.p)
            eps = epsilon_schedule(N, zeta, cfg.p, d, cfg.theta)
        else:
            eps = float(cfg.epsilon)
        if cfg.kernel is None:
            drift, ref_eps = None, ref
        else:
            kern = build_regularized(cfg.kernel, eps, p=cfg.p)
            drift = GridDrift(kern, VN, cfg.grid)
            ref_eps = _reference(cfg, kern, nu)
        args = [(cfg, N, r, eps, VN, drift, ref, ref_eps) for r in range(cfg.replicas)]
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                out = list(ex.map(lambda a: _run_replica(*a), args))
        else:
            out = [_run_replica(*a) for a in args]
        reps.extend(out)
        ok = [o for o in out if not o.error]
        dist = np.array([o.distance for o in ok])
        de = np.array([o.distance_eps for o in ok])
        zz = np.array([o.z_summary for o in ok])
        if len(ok):
            q = np.percentile(dist, [25, 50, 75])
            qe = np.percentile(de, [25, 50, 75])
            row = SweepRow(N, cfg.beta, eps, zeta, len(ok), float(q[1]), float(q[2] - q[0]),
                           float(np.mean(dist ** cfg.m) ** (1 / cfg.m)), float(qe[1]), float(qe[2] - qe[0]),
                           float(np.median(zz)), time.perf_counter() - t0)
            rows.append(row)
    slope = fit_exponent([r.N for r in rows], [r.median for r in rows]) if len(rows) >= 2 else float("nan")
    zexp = float("nan")
    if cfg.z_every and len(rows) >= 2:
        zexp = fit_exponent([r.N for r in rows], [r.median_z for r in rows])
    return ConvergenceReport(tuple(rows), tuple(reps), slope, zexp)
