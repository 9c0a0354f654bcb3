"""Run configuration: YAML parsing, defaults and validation.

Validation never stops at the first problem; it returns every violation
so a config can be fixed in one pass.  See ``configs/example.yaml`` at
the repository root for an annotated example.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import yaml

EXPERIMENTS = ("simulate", "pde", "converge", "noise-check", "cov-decay", "zconv", "zeta")

DEFAULTS = {
    "experiment": "simulate",
    "seed": None,
    "out": "results",
    "strict": True,
    "threads": 1,
    "replicas": 16,
    "kernel": {"kind": "biot_savart", "d": 2, "s": 0.0, "c_d": None, "epsilon": "schedule", "theta": 1.0},
    "mollifier": {"beta": 1 / 64, "m": 4.0, "p": 4.0},
    "noise": {"enabled": True, "alpha": 4.0, "n_scale": "coupled", "modes": None},
    "initial": {"kind": "gaussian", "sigma": [1.0, 0.6], "radius": 2.0},
    "particles": {"N": 1024, "Ns": [64, 256, 1024, 4096], "dt": 1e-3, "T": 0.5, "snapshot_every": 0.05},
    "grid": {"L": 10.0, "n": 128},
    "pde": {"nu": "noise", "pad": 2, "n": 256, "L": 16.0},
    "zeta": {"Ns": [64, 128, 256, 512, 1024, 2048, 4096], "replicas": 64},
    "noise_check": {"replicas": 10000, "modes": None, "points": 20, "bases": 4},
    "cov_decay": {"n_scales": [0.0, 1.0, 2.0, 3.0], "ell": 2.0, "N": 16, "T": 0.1, "dt": 0.01,
                  "replicas": 256},
    "zconv": {"every": 4},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Nested dictionary of settings with defaults filled in."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        return cls(_merge(DEFAULTS, doc or {}))

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        doc = yaml.safe_load(text)
        if doc is not None and not isinstance(doc, dict):
            raise ValueError("config must be a mapping at the top level")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def d(self) -> int:
        return int(self.data["kernel"]["d"])


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _pos(x):
    return _is_num(x) and x > 0


def _frac(x):
    f = Fraction(x).limit_denominator(10_000)
    return f"1/{f.denominator}" if f.numerator == 1 else f"{float(x):.6g}"


def validate(cfg: RunConfig) -> list:
    """Every violation of the run constraints, as human-readable strings."""
    v = []
    c = cfg.data
    if c["experiment"] not in EXPERIMENTS:
        v.append(f"experiment {c['experiment']!r} is not one of {', '.join(EXPERIMENTS)}")
    if c["seed"] is None:
        v.append("seed is missing (set it in the config or pass --seed)")
    elif not isinstance(c["seed"], int) or isinstance(c["seed"], bool) or c["seed"] < 0:
        v.append("seed must be a nonnegative integer")
    if not isinstance(c["threads"], int) or c["threads"] < 1:
        v.append("threads must be a positive integer")
    if not isinstance(c["replicas"], int) or c["replicas"] < 1:
        v.append("replicas must be a positive integer")
    _check_out(c["out"], v)

    k = c["kernel"]
    kind, d = k["kind"], k["d"]
    if kind not in ("biot_savart", "repulsive_poisson", "riesz_gradient"):
        v.append(f"kernel.kind {kind!r} is unknown")
    if d not in (2, 3):
        v.append("kernel.d must be 2 or 3")
        d = 2
    if kind == "biot_savart" and d != 2:
        v.append("the Biot-Savart kernel needs d = 2")
    if kind == "riesz_gradient" and not (_is_num(k["s"]) and 0 <= k["s"] <= d - 2):
        v.append(f"Riesz exponent s must lie in [0, {d - 2}]")
    eps = k["epsilon"]
    if eps != "schedule" and not _pos(eps):
        v.append("kernel.epsilon must be positive or 'schedule'")
    if not _pos(k["theta"]):
        v.append("kernel.theta must be positive")

    mo = c["mollifier"]
    beta, m, p = mo["beta"], mo["m"], mo["p"]
    if not (_is_num(beta) and 0 < beta < 1):
        v.append("mollifier.beta must lie in (0, 1)")
    if not (_is_num(m) and m > 2):
        v.append("mollifier.m must exceed 2")
    if not (_is_num(p) and p > 2):
        v.append("p must exceed 2")
    elif kind == "repulsive_poisson" and p <= d:
        v.append("p must exceed d")
    elif kind == "riesz_gradient" and _is_num(k["s"]) and p <= k["s"] + 2:
        v.append("p must exceed s+2")
    if c["strict"] and _is_num(beta) and _is_num(m) and m > 0:
        bound = 1.0 / (4.0 * m * (d + 2))
        if beta > bound * (1 + 1e-12):
            v.append(f"β exceeds {_frac(bound)}")

    nz = c["noise"]
    if nz["enabled"]:
        if not (_is_num(nz["alpha"]) and nz["alpha"] > 2):
            v.append("noise.alpha must exceed 2")
        ns = nz["n_scale"]
        if ns != "coupled" and not (_is_num(ns) and ns >= 0):
            v.append("noise.n_scale must be nonnegative or 'coupled'")
        _check_modes(nz["modes"], d, "noise.modes", v)

    ini = c["initial"]
    if ini["kind"] == "gaussian":
        sig = ini["sigma"]
        sig = sig if isinstance(sig, list) else [sig]
        if not all(_pos(s) for s in sig) or len(sig) not in (1, d):
            v.append(f"initial.sigma must be a positive number or a list of {d}")
    elif ini["kind"] == "bump":
        if not _pos(ini["radius"]):
            v.append("initial.radius must be positive")
    else:
        v.append("initial.kind must be 'gaussian' or 'bump'")

    pa = c["particles"]
    if not (isinstance(pa["N"], int) and pa["N"] >= 2):
        v.append("particles.N must be an integer >= 2")
    Ns = pa["Ns"]
    if not (isinstance(Ns, list) and Ns and all(isinstance(n, int) and n >= 2 for n in Ns)):
        v.append("particles.Ns must be a nonempty list of integers >= 2")
    elif sorted(Ns) != Ns or len(set(Ns)) != len(Ns):
        v.append("particles.Ns must be strictly increasing")
    _check_times(pa["dt"], pa["T"], "particles", v)
    if not _pos(pa["snapshot_every"]):
        v.append("particles.snapshot_every must be positive")
    elif _pos(pa["dt"]) and abs(pa["snapshot_every"] / pa["dt"] - round(pa["snapshot_every"] / pa["dt"])) > 1e-9:
        v.append("particles.snapshot_every must be a multiple of dt")

    _check_grid(c["grid"], "grid", v)
    pde = c["pde"]
    if pde["nu"] != "noise" and not _pos(pde["nu"]):
        v.append("pde.nu must be positive or 'noise'")
    if pde["nu"] == "noise" and not nz["enabled"] and c["experiment"] == "pde":
        v.append("pde.nu = 'noise' needs the noise enabled")
    if not (isinstance(pde["pad"], int) and pde["pad"] >= 1):
        v.append("pde.pad must be a positive integer")
    _check_grid({"L": pde["L"], "n": pde["n"]}, "pde", v)

    ze = c["zeta"]
    if not (isinstance(ze["replicas"], int) and ze["replicas"] >= 32):
        v.append("zeta.replicas must be at least 32")
    if not (isinstance(ze["Ns"], list) and len(ze["Ns"]) >= 2):
        v.append("zeta.Ns needs at least two entries")
    nc = c["noise_check"]
    if not (isinstance(nc["replicas"], int) and nc["replicas"] >= 2):
        v.append("noise_check.replicas must be at least 2")
    _check_modes(nc["modes"], d, "noise_check.modes", v)
    cd = c["cov_decay"]
    if not (_is_num(cd["ell"]) and cd["ell"] >= 2):
        v.append("cov_decay.ell must be at least 2")
    if not (isinstance(cd["replicas"], int) and cd["replicas"] >= 256) and c["strict"]:
        v.append("cov_decay.replicas must be at least 256")
    _check_times(cd["dt"], cd["T"], "cov_decay", v)
    if not (isinstance(c["zconv"]["every"], int) and c["zconv"]["every"] >= 1):
        v.append("zconv.every must be a positive integer")
    elif _pos(pa["dt"]) and c["zconv"]["every"] * pa["dt"] > 1 / 16 + 1e-12:
        v.append("zconv.every * dt must not exceed 1/16")
    return v


def _check_out(out, v):
    if not isinstance(out, str) or not out:
        v.append("out must be a directory path")
        return
    probe = os.path.abspath(out)
    while not os.path.exists(probe):
        parent = os.path.dirname(probe)
        if parent == probe:
            break
        probe = parent
    if not (os.path.isdir(probe) and os.access(probe, os.W_OK)):
        v.append(f"output directory {out!r} is not writable")


def mode_count(M, d, default):
    """M, or ``default`` rounded up to a multiple of d when M is None."""
    if M is None:
        return -(-default // d) * d
    return M


def _check_modes(M, d, name, v):
    if M is None:
        return
    if not (isinstance(M, int) and M >= 16 and M % d == 0):
        v.append(f"{name} must be an integer >= 16 and a multiple of d={d}")


def _check_times(dt, T, name, v):
    if not _pos(dt):
        v.append(f"{name}.dt must be positive")
    if not _pos(T):
        v.append(f"{name}.T must be positive")
    if _pos(dt) and _pos(T) and abs(T / dt - round(T / dt)) > 1e-9 * max(1.0, T / dt):
        v.append(f"{name}.T must be a multiple of dt")


def _check_grid(g, name, v):
    n = g["n"]
    if not (isinstance(n, int) and n >= 4 and n & (n - 1) == 0):
        v.append(f"{name}.n must be a power of two >= 4")
    if not _pos(g["L"]):
        v.append(f"{name}.L must be positive")
