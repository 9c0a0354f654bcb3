"""Command line entry point.

    moderate-ips <subcommand> [--config PATH] [--seed N] [--out DIR]
                 [--threads N] [--strict | --exploratory]

Exit status: 0 on success, 2 when the config fails validation, 3 when the
experiment fails or produces no usable rows.  Every run writes a
``run_record.json`` next to its result files.  Results are first written
with a ``.partial`` suffix and renamed only when the whole run succeeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import rng as rng_mod
from .config import EXPERIMENTS, RunConfig, mode_count, validate
from .diagnostics import (SweepConfig, convergence_sweep, entropy_trend, epsilon_schedule,
                          force_covariance_decay)
from .fields import (SCHEMA_VERSION, BumpDensity, GaussianDensity, GridField, GridSpec, mollify,
                     zeta_estimate, zeta_single)
from .kernels import KernelKind, build_regularized
from .mollifiers import Mollifier, ModerateScaling, moderate_potential
from .noise import build_noise, covariance_quadrature, empirical_covariance, write_covariance_csv
from .particles import GridDrift, init_ensemble, simulate
from .pde import PdeConfig, solve

OK, INVALID, FAILED = 0, 2, 3


# ---------------------------------------------------------------------------
# builders


def initial_density(cfg: RunConfig):
    ini, d = cfg["initial"], cfg.d
    if ini["kind"] == "bump":
        return BumpDensity(d, float(ini["radius"]))
    sig = ini["sigma"]
    sig = tuple(float(s) for s in sig) if isinstance(sig, list) else float(sig)
    if isinstance(sig, tuple) and len(sig) == 1:
        sig = sig[0]
    return GaussianDensity(d, sig)


def kernel_kind(cfg: RunConfig) -> KernelKind:
    k = cfg["kernel"]
    return KernelKind(k["kind"], int(k["d"]), c_d=k["c_d"], s=float(k["s"]))


def pde_nu(cfg: RunConfig) -> float:
    from .noise import nu_theoretical

    nu = cfg["pde"]["nu"]
    if nu == "noise":
        return nu_theoretical(cfg.d, cfg["noise"]["alpha"]) if cfg["noise"]["enabled"] else 1e-12
    return float(nu)


def resolve_epsilon(cfg: RunConfig, N: int) -> float:
    """Fixed epsilon, or the scheduled one with zeta_N estimated at this N."""
    k, mo = cfg["kernel"], cfg["mollifier"]
    if k["epsilon"] != "schedule":
        return float(k["epsilon"])
    grid = GridSpec(cfg.d, float(cfg["grid"]["L"]), int(cfg["grid"]["n"]))
    sc = ModerateScaling(mo["beta"], N, m=mo["m"], p=mo["p"], d=cfg.d, strict=cfg["strict"])
    z, _, _ = zeta_single(initial_density(cfg), N, sc, grid, 32, cfg["seed"], mo["m"], mo["p"])
    return epsilon_schedule(N, z, mo["p"], cfg.d, k["theta"])


def sweep_config(cfg: RunConfig, z_every: int = 0) -> SweepConfig:
    pa, mo, nz, k = cfg["particles"], cfg["mollifier"], cfg["noise"], cfg["kernel"]
    return SweepConfig(
        Ns=tuple(pa["Ns"]), replicas=cfg["replicas"], kernel=kernel_kind(cfg), omega0=initial_density(cfg),
        beta=mo["beta"], m=mo["m"], p=mo["p"], T=pa["T"], dt=pa["dt"], snapshot_every=pa["snapshot_every"],
        grid=GridSpec(cfg.d, float(cfg["grid"]["L"]), int(cfg["grid"]["n"])), pde_pad=cfg["pde"]["pad"],
        alpha=nz["alpha"], M=mode_count(nz["modes"], cfg.d, 128),
        n_scale=None if nz["n_scale"] == "coupled" else float(nz["n_scale"]),
        noise=bool(nz["enabled"]), theta=k["theta"], epsilon=None if k["epsilon"] == "schedule" else k["epsilon"],
        seed=cfg["seed"], strict=cfg["strict"], threads=cfg["threads"], z_every=z_every)


# ---------------------------------------------------------------------------
# output


class Writer:
    """Collects result files as ``.partial`` and publishes them at the end."""

    def __init__(self, out):
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name + ".partial")

    def csv(self, name, header, rows, comments=()):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            for c in comments:
                fh.write(f"# {c}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])

    def publish(self):
        for name in self.files:
            os.replace(os.path.join(self.out, name + ".partial"), os.path.join(self.out, name))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _build_id():
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=os.path.dirname(__file__), timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_json(path, doc):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_fmt)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# experiments; each returns (summary dict, number of usable rows)


def _map(threads, fn, items):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def run_simulate(cfg, w):
    pa, nz, mo = cfg["particles"], cfg["noise"], cfg["mollifier"]
    N, d = pa["N"], cfg.d
    grid = GridSpec(d, float(cfg["grid"]["L"]), int(cfg["grid"]["n"]))
    eps = resolve_epsilon(cfg, N)
    VN = moderate_potential(Mollifier(d), ModerateScaling(mo["beta"], N, m=mo["m"], p=mo["p"], d=d,
                                                          strict=cfg["strict"]))
    drift = GridDrift(build_regularized(kernel_kind(cfg), eps, p=mo["p"]), VN, grid)
    omega0 = initial_density(cfg)
    k = int(round(pa["snapshot_every"] / pa["dt"]))
    n = int(round(pa["T"] / pa["dt"]))
    times = sorted({i * pa["dt"] for i in range(0, n + 1, k)} | {pa["T"]})

    def one(r):
        noise = None
        if nz["enabled"]:
            ns = math.log(N) if nz["n_scale"] == "coupled" else float(nz["n_scale"])
            noise = build_noise(d, nz["alpha"], ns, mode_count(nz["modes"], d, 128),
                                rng_mod.stream(cfg["seed"], rng_mod.NOISE_MODES, N, r))
        snaps = simulate(init_ensemble(N, omega0, cfg["seed"], r), pa["dt"], pa["T"], drift, noise, times)
        fields = [mollify(e, VN, grid) for _, e in snaps]
        return snaps, entropy_trend(fields).values

    res = _map(cfg["threads"], one, range(cfg["replicas"]))
    rows, erows = [], []
    for r, (snaps, ent) in enumerate(res):
        for (t, e), h in zip(snaps, ent):
            erows.append((r, t, h))
            for i, x in enumerate(e.positions):
                rows.append((r, t, i, *x))
    w.csv("particles.csv", ["replica", "time", "particle_id"] + [f"x{i + 1}" for i in range(d)], rows)
    w.csv("entropy.csv", ["replica", "time", "entropy"], erows)
    return {"N": N, "epsilon": eps}, len(res)


def run_pde(cfg, w):
    pa, pde, mo = cfg["particles"], cfg["pde"], cfg["mollifier"]
    grid = GridSpec(cfg.d, float(pde["L"]), int(pde["n"]))
    kern = kernel_kind(cfg)
    if cfg["kernel"]["epsilon"] != "schedule":
        kern = build_regularized(kern, float(cfg["kernel"]["epsilon"]), p=mo["p"])
    w0 = GridField.from_function(grid, initial_density(cfg).pdf)
    k = int(round(pa["snapshot_every"] / pa["dt"]))
    n = int(round(pa["T"] / pa["dt"]))
    times = tuple(i * pa["dt"] for i in range(0, n + 1, k))
    sol = solve(w0, PdeConfig(pde_nu(cfg), grid, pa["dt"], pa["T"], kernel=kern, snapshot_times=times,
                              store_every=10 ** 9))
    p = mo["p"]
    ent = entropy_trend(sol.fields, reference=None).values
    rows = [(t, f.mass(), f.lp_norm(1.0), f.lp_norm(p), e) for t, f, e in zip(sol.times, sol.fields, ent)]
    w.csv("pde.csv", ["time", "mass", "l1", f"l{p:g}", "entropy"], rows, [f"status: {sol.status}"])
    sol.fields[-1].to_binary(w.path("pde_final.bin"))
    return {"status": sol.status, "blowup_time": sol.blowup_time}, len(rows)


def run_converge(cfg, w, z_every=0):
    rep = convergence_sweep(sweep_config(cfg, z_every))
    w.csv("converge_replicas.csv", ["N", "replica", "epsilon", "distance", "distance_eps", "z_summary", "error"],
          rep.replica_rows)
    # timings go to the run record so result files stay byte-identical across runs
    w.csv("converge_aggregate.csv",
          ["N", "beta", "epsilon", "zeta", "replicas", "median", "iqr", "lm_norm", "median_eps", "iqr_eps",
           "median_z"], [r[:-1] for r in rep.rows])
    return {"fitted_exponent": rep.fitted_exponent, "z_exponent": rep.z_exponent,
            "wall_time_per_N": {str(r.N): r.wall_time for r in rep.rows}}, len(rep.rows)


def run_zconv(cfg, w):
    return run_converge(cfg, w, z_every=cfg["zconv"]["every"])


def spiral_points(d, count):
    """Deterministic spiral of ``count`` points with radii from 0.05 to 3."""
    r = np.geomspace(0.05, 3.0, count)
    a = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
    if d == 2:
        return np.stack([r * np.cos(a), r * np.sin(a)], -1)
    b = np.linspace(0.1, math.pi - 0.1, count)
    return np.stack([r * np.sin(b) * np.cos(a), r * np.sin(b) * np.sin(a), r * np.cos(b)], -1)


def run_noise_check(cfg, w):
    nc, nz, d = cfg["noise_check"], cfg["noise"], cfg.d
    ns = 0.0 if nz["n_scale"] == "coupled" else float(nz["n_scale"])
    pts = np.concatenate([np.zeros((1, d)), spiral_points(d, nc["points"])])
    M = mode_count(nc["modes"], d, 512)
    est = empirical_covariance(d, nz["alpha"], ns, M, pts, nc["replicas"], cfg["seed"], nc["bases"])
    orc = covariance_quadrature(d, nz["alpha"], ns, pts)
    write_covariance_csv(w.path("covariance.csv"), pts, orc, est.mean, est.stderr)
    zmax = float(np.max(np.abs(est.mean - orc) / est.stderr))
    return {"max_abs_z_score": zmax, "n_scale": ns}, len(pts)


def run_cov_decay(cfg, w):
    cd, nz, d = cfg["cov_decay"], cfg["noise"], cfg.d
    eps = cfg["kernel"]["epsilon"]
    res = force_covariance_decay(d, nz["alpha"], cd["n_scales"], cd["ell"], cd["replicas"], N=cd["N"],
                                 T=cd["T"], dt=cd["dt"], M=mode_count(nz["modes"], d, 128),
                                 epsilon=0.5 if eps == "schedule" else eps,
                                 beta=cfg["mollifier"]["beta"], seed=cfg["seed"], kernel=kernel_kind(cfg))
    rows = list(zip(res.n_scales, res.means, res.stderr))
    w.csv("cov_decay.csv", ["n_scale", "mean", "stderr"], rows,
          [f"baseline_mean: {res.baseline!r}", f"baseline_stderr: {res.baseline_stderr!r}",
           f"baseline_oracle: {res.oracle!r}"])
    return {"baseline": res.baseline, "baseline_stderr": res.baseline_stderr, "oracle": res.oracle}, len(rows)


def run_zeta(cfg, w):
    ze, mo, d = cfg["zeta"], cfg["mollifier"], cfg.d
    grid = GridSpec(d, float(cfg["grid"]["L"]), int(cfg["grid"]["n"]))
    rep = zeta_estimate(initial_density(cfg), ze["Ns"], mo["beta"], grid, ze["replicas"], cfg["seed"],
                        mo["m"], mo["p"], cfg["strict"])
    rows = list(zip(rep.N, rep.zeta, rep.stderr))
    w.csv("zeta.csv", ["N", "zeta", "stderr"], rows)
    return {"lambda_fit": rep.lambda_fit, "log_constant": rep.log_constant}, len(rows)


RUNNERS = {"simulate": run_simulate, "pde": run_pde, "converge": run_converge, "noise-check": run_noise_check,
           "cov-decay": run_cov_decay, "zconv": run_zconv, "zeta": run_zeta}


def run(cfg: RunConfig) -> dict:
    """Execute a validated config and return its RunRecord."""
    out = cfg["out"]
    w = Writer(out)
    t0 = time.perf_counter()
    record = {"schema_version": SCHEMA_VERSION, "build": _build_id(), "config": cfg.data,
              "experiment": cfg["experiment"], "status": "failed", "files": [], "summary": {}}
    try:
        summary, rows = RUNNERS[cfg["experiment"]](cfg, w)
        record["summary"] = summary
        if rows > 0:
            w.publish()
            record["status"] = "ok"
            record["files"] = list(w.files)
        else:
            record["error"] = "no usable rows"
            record["files"] = [f + ".partial" for f in w.files]
    except BaseException as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["files"] = [f + ".partial" for f in w.files]
        if not isinstance(exc, Exception):
            record["wall_time"] = time.perf_counter() - t0
            _write_json(os.path.join(out, "run_record.json"), record)
            raise
    record["wall_time"] = time.perf_counter() - t0
    _write_json(os.path.join(out, "run_record.json"), record)
    return record


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    ap = argparse.ArgumentParser(prog="moderate-ips", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=EXPERIMENTS + ("validate",))
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help="replica worker threads")
    mode = ap.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=None,
                      help="enforce the admissible parameter ranges (default)")
    mode.add_argument("--exploratory", dest="strict", action="store_false",
                      help="allow parameters outside the admissible ranges")
    return ap


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.command != "validate":
        cfg.data["experiment"] = args.command
    for key in ("seed", "out", "threads", "strict"):
        val = getattr(args, key)
        if val is not None:
            cfg.data[key] = val
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return INVALID
    problems = validate(cfg)
    if problems:
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return INVALID
    if args.command == "validate":
        print("config is valid")
        return OK
    record = run(cfg)
    if record["status"] != "ok":
        print(f"run failed: {record.get('error', '')}", file=sys.stderr)
        return FAILED
    print(json.dumps(record["summary"], sort_keys=True, default=_fmt))
    return OK


if __name__ == "__main__":
    sys.exit(main())
