"""Experiment configuration: a versioned JSON document resolved to concrete specs.

Every section has a fixed key set; unknown keys are rejected and defaults are
materialised so that the resolved document alone reproduces a run.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import spectral as sp
from .flows import INTEGRATORS, KINDS, FlowSpec
from .measures import GaussianSpec, mu, mu_v
from .potential import InadmissiblePotential, Potential, Profile

SCHEMA_VERSION = 1
EXPERIMENTS = ("sample", "evolve", "invariance", "stability", "spectrum", "convergence", "closeness")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "output": "results",
    "measure": {"N": 16, "N_tail": 0, "V": "0"},
    "flow": {
        "kind": "composite-bbm",
        "V": None,
        "dt": 1e-3,
        "integrator": "implicit-midpoint",
        "tol": 1e-12,
        "max_iter": 50,
        "N_ref_multiplier": 4,
    },
    "stats": {"count": 10000, "times": [0.0], "probes": [], "chunk": 4096},
}

PARAM_DEFAULTS = {
    "sample": {},
    "evolve": {"member": 0, "t_end": 10.0, "drift_tol": 1e-8, "trajectories": True},
    "invariance": {},
    "spectrum": {},
    "stability": {
        "profile": "cos(x)",
        "eps": [0.0125, 0.025, 0.05, 0.1],
        "radii": [],
        "primary_time": 1.0,
        "slope_window": [0.7, 1.3],
    },
    "convergence": {"N_list": [8, 16, 32], "t": 0.05, "N_ref": None},
    "closeness": {"halving_time": None, "tolerance": 0.2},
}

REQUIRED = ("experiment", "seed")


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _merge(defaults: dict, given: dict, where: str) -> dict:
    _check_keys(given, defaults, where)
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def resolve(raw: dict) -> dict:
    """Validate ``raw`` and return the fully defaulted document."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key '{key}'")
    top = set(DEFAULTS) | set(REQUIRED) | {"params"}
    _check_keys(raw, top, "config")
    exp = raw["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{exp}' (expected one of {', '.join(EXPERIMENTS)})")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if raw.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {raw.get('schema')!r}")
    cfg = {
        "schema": SCHEMA_VERSION,
        "experiment": exp,
        "seed": seed,
        "output": raw.get("output", DEFAULTS["output"]),
        "measure": _merge(DEFAULTS["measure"], raw.get("measure", {}), "measure"),
        "flow": _merge(DEFAULTS["flow"], raw.get("flow", {}), "flow"),
        "stats": _merge(DEFAULTS["stats"], raw.get("stats", {}), "stats"),
        "params": _merge(PARAM_DEFAULTS[exp], raw.get("params", {}), "params"),
    }
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    m, f, s = cfg["measure"], cfg["flow"], cfg["stats"]
    for key in ("N", "N_tail"):
        if not isinstance(m[key], int) or m[key] < 0:
            raise ConfigError(f"measure.{key} must be a nonnegative integer")
    if f["kind"] not in KINDS:
        raise ConfigError(f"flow.kind must be one of {', '.join(KINDS)}")
    if f["integrator"] not in INTEGRATORS:
        raise ConfigError(f"flow.integrator must be one of {', '.join(INTEGRATORS)}")
    for key in ("dt", "tol"):
        if not isinstance(f[key], (int, float)) or not f[key] > 0:
            raise ConfigError(f"flow.{key} must be positive")
    if not isinstance(f["N_ref_multiplier"], int) or f["N_ref_multiplier"] < 1:
        raise ConfigError("flow.N_ref_multiplier must be a positive integer")
    if not isinstance(s["count"], int) or s["count"] < 2:
        raise ConfigError("stats.count must be an integer >= 2")
    times = s["times"]
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) and t >= 0 for t in times):
        raise ConfigError("stats.times must be a list of nonnegative numbers")
    # build everything once so errors surface at load time
    potential(m["V"])
    for p in s["probes"]:
        parse_probe(p, m["N"] + m["N_tail"])
    if cfg["experiment"] == "stability":
        try:
            Profile.parse(cfg["params"]["profile"])
        except ValueError as err:
            raise ConfigError(f"params.profile: {err}") from err


# -- builders -------------------------------------------------------------------------


def potential(spec) -> Potential | None:
    """``"0"``/None for no potential, an expression string, or ``{"file": path}``."""
    if spec is None:
        return None
    try:
        if isinstance(spec, dict):
            _check_keys(spec, ("file",), "potential")
            V = Potential.from_file(spec["file"])
        elif isinstance(spec, str):
            V = Potential.parse(spec)
        else:
            raise ConfigError("potential must be an expression string or {'file': path}")
    except InadmissiblePotential as err:
        raise ConfigError(f"inadmissible potential: {err}") from err
    except (ValueError, OSError, SyntaxError) as err:
        raise ConfigError(f"cannot read potential {spec!r}: {err}") from err
    return None if V.is_zero else V


_TERM = re.compile(r"\s*([+-])?\s*(?:((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*\*\s*)?([cs])(\d+)\s*")


def parse_probe(spec, N: int) -> sp.SpectralField:
    """A probe is a coefficient list or a sum like ``"c1"``, ``"0.5*c0 - 2*s3"``."""
    if isinstance(spec, list):
        try:
            return sp.SpectralField(sp.pad(np.asarray(spec, dtype=float), N))
        except ValueError as err:
            raise ConfigError(f"bad probe coefficients: {err}") from err
    if not isinstance(spec, str) or not spec.strip():
        raise ConfigError(f"bad probe {spec!r}")
    out = np.zeros(sp.dim(N))
    pos = 0
    while pos < len(spec):
        mt = _TERM.match(spec, pos)
        if not mt or mt.end() == pos or (pos and mt.group(1) is None):
            raise ConfigError(f"cannot parse probe {spec!r} at position {pos}")
        sign = -1.0 if mt.group(1) == "-" else 1.0
        coef = sign * (float(mt.group(2)) if mt.group(2) else 1.0)
        kind, n = mt.group(3), int(mt.group(4))
        if n > N or (kind == "s" and n == 0):
            raise ConfigError(f"probe mode {kind}{n} outside order {N}")
        out[n if kind == "c" else N + n] += coef
        pos = mt.end()
    return sp.SpectralField(out)


@dataclass
class Resolved:
    cfg: dict
    measure: GaussianSpec
    flow: FlowSpec
    probes: list

    @property
    def N_ref(self) -> int:
        return self.cfg["flow"]["N_ref_multiplier"] * self.cfg["measure"]["N"]


def build(cfg: dict) -> Resolved:
    m, f = cfg["measure"], cfg["flow"]
    V = potential(m["V"])
    meas = mu(m["N"], m["N_tail"]) if V is None else mu_v(V, m["N"], m["N_tail"])
    kind = f["kind"]
    fV = potential(f["V"]) if f["V"] is not None else V
    if kind in ("perturbed", "composite-perturbed"):
        fV = fV if fV is not None else Potential.zero()
    else:
        fV = None
    tail = m["N_tail"] if kind.startswith("composite") or kind == "linear" else 0
    try:
        flow = FlowSpec(kind, m["N"], tail, fV, f["integrator"], float(f["dt"]), float(f["tol"]), int(f["max_iter"]))
    except ValueError as err:
        raise ConfigError(str(err)) from err
    probes = [parse_probe(p, m["N"] + m["N_tail"]) for p in cfg["stats"]["probes"]]
    return Resolved(cfg, meas, flow, probes)


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return resolve(raw)
