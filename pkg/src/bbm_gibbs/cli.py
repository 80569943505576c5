"""Command-line entry point: ``bbm-gibbs <experiment|describe> <config.json>``.

Exit status: 0 when every gated verdict passes, 1 on a failed verdict, 2 on a
configuration error, 3 on a numerical failure (non-convergence or blow-up).
The default worker count comes from the ``BBM_GIBBS_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import spectral as sp
from .config import EXPERIMENTS, ConfigError, Resolved, build, load
from .duhamel import ContractionFailure, flow_convergence
from .export import dumps, write_report_csv, write_report_json, write_trajectory
from .flows import FlowError, evolve
from .measures import covariance, mu, sample_members
from .montecarlo import (
    EnsembleSpec,
    calibration_report,
    default_workers,
    expected_spectrum,
    flow_closeness,
    invariance_report,
    kz_spectrum,
    mode_energies_expected,
    run_ensemble,
    stability_scan,
)
from .potential import Profile
from .stats import StatReport

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _times(cfg: dict, extra=()) -> tuple:
    ts = sorted({0.0, *map(float, cfg["stats"]["times"]), *map(float, extra)})
    return tuple(ts)


def _ensemble_spec(res: Resolved, times=None) -> EnsembleSpec:
    s = res.cfg["stats"]
    return EnsembleSpec(res.measure, res.flow, s["count"], times or _times(res.cfg), tuple(res.probes),
                        res.cfg["seed"], s["chunk"])


def _spectrum_report(ens, res: Resolved) -> StatReport:
    rep = StatReport("spectrum", count=ens.count, seed=res.cfg["seed"])
    C = covariance(res.measure).matrix
    expected = mode_energies_expected(C)
    L = sp.order_of(ens.states.shape[-1])
    expected = np.concatenate([expected, np.zeros(L + 1 - expected.size)])
    rep.estimates["expected@0"] = expected
    if res.measure.kind == "mu":
        rep.fits["closed_form_2_over_1_plus_n2"] = expected_spectrum(L)
    k0, e0 = kz_spectrum(ens, 0.0)
    for t in ens.times:
        k, e = kz_spectrum(ens, t)
        rep.estimates[f"kz_spectrum@{t:g}"] = k
        rep.stderr[f"kz_spectrum@{t:g}"] = e
        if t == 0:
            z = np.abs(k - expected) / np.where(e > 0, e, np.inf)
            rep.gate("t=0 mode energies match closed form (max z)", float(np.max(z)), 3.0)
        else:
            z = np.abs(k - k0) / np.where(np.hypot(e, e0) > 0, np.hypot(e, e0), np.inf)
            rep.gate(f"t={t:g} mode energies match t=0 (max z)", float(np.max(z)), 3.0)
    return rep


def execute(res: Resolved, out: Path, workers: int) -> list:
    cfg, p = res.cfg, res.cfg["params"]
    exp = cfg["experiment"]
    if exp == "sample":
        ens = run_ensemble(_ensemble_spec(res, (0.0,)), workers)
        return [calibration_report(ens, res.probes)]
    if exp == "spectrum":
        return [_spectrum_report(run_ensemble(_ensemble_spec(res), workers), res)]
    if exp == "invariance":
        ens = run_ensemble(_ensemble_spec(res), workers)
        return [calibration_report(ens, res.probes), invariance_report(ens, res.probes)]
    if exp == "evolve":
        u0 = sample_members(res.measure, cfg["seed"], [p["member"]])[0]
        ts = _times(cfg, [p["t_end"]])
        traj = evolve(res.flow, sp.project(u0, res.flow.order), times=ts)
        rep = StatReport("evolve", count=1, seed=cfg["seed"])
        for name, series in traj.conserved.items():
            rep.estimates[name] = np.asarray(series)
        rep.meta.update(traj.diagnostics)
        key = "energy_ev" if res.flow.perturbed else "h1_energy"
        rep.gate(f"relative drift of {key}", float(traj.drift(key)), p["drift_tol"])
        rep.fits["hamiltonian_drift"] = float(traj.drift("hamiltonian_h")) if "hamiltonian_h" in traj.conserved else None
        if p["trajectories"]:
            write_trajectory(out / "trajectories" / f"member-{p['member']}.csv", traj,
                             {"seed": cfg["seed"], "member": p["member"], "flow": cfg["flow"]})
        return [rep]
    if exp == "stability":
        lams = res.probes or [sp.cos_mode(1, res.measure.order)]
        prim = p["primary_time"]
        ts = sorted({prim, *[t for t in cfg["stats"]["times"] if t > 0]})
        rep = stability_scan(Profile.parse(p["profile"]), p["eps"], lams, ts, cfg["stats"]["count"], res.measure.N,
                             cfg["seed"], res.flow.dt, p["radii"] or None, (0, prim), workers, tuple(p["slope_window"]))
        return [rep]
    if exp == "convergence":
        N_ref = p["N_ref"] or res.N_ref
        u0 = sample_members(mu(N_ref), cfg["seed"], np.arange(cfg["stats"]["count"]))
        return [flow_convergence(u0, p["N_list"], p["t"], res.flow, N_ref)]
    if exp == "closeness":
        V = res.flow.V if res.flow.V is not None else res.measure.V
        if V is None:
            raise ConfigError("closeness needs a potential (measure.V or flow.V)")
        u0 = sample_members(res.measure, cfg["seed"], np.arange(cfg["stats"]["count"]))
        ts = _times(cfg)
        return [flow_closeness(V, u0, ts, res.measure.N, res.flow.dt, p["halving_time"], p["tolerance"])]
    raise ConfigError(f"unknown experiment {exp}")


def plan(res: Resolved) -> str:
    """Resolved configuration, workload estimate and the gates to be evaluated."""
    cfg = res.cfg
    exp, p = cfg["experiment"], cfg["params"]
    count = cfg["stats"]["count"]
    times = _times(cfg, [p["t_end"]] if exp == "evolve" else [])
    steps = 0 if res.flow.kind == "linear" else math.ceil(max(times) / res.flow.dt)
    members = 1 if exp == "evolve" else count
    lines = [f"experiment: {exp}", "resolved config:", json.dumps(cfg, indent=2, sort_keys=True)]
    lines.append(f"measure: {res.measure.kind} order {res.measure.N} (+{res.measure.N_tail} tail)")
    lines.append(f"flow: {res.flow.kind}, integrator {res.flow.integrator}, dt {res.flow.dt:g}, tol {res.flow.tol:g}")
    lines.append(f"reference order N_ref = {res.N_ref}")
    gates = []
    if exp == "evolve":
        mon = ["energy_ev", "hamiltonian_h"] if res.flow.perturbed else ["h1_energy", "hamiltonian_h"]
        lines.append(f"conserved quantities monitored: {', '.join(mon)}")
        gates.append(f"relative drift of {mon[0]} <= {p['drift_tol']:g}")
    elif exp == "stability":
        ladder = sorted(p["eps"])
        members *= len(ladder) + 2
        steps = math.ceil(max([p["primary_time"], *times]) / res.flow.dt)
        lines.append(f"eps ladder: {ladder} times profile {p['profile']}")
        lines.append("coupling: common random numbers (same normals for every eps) with eps=0 control variate;"
                     " an independent eps=0 ensemble gives the uncoupled comparison")
        gates += [f"log-log slope in {p['slope_window']}", "eps=0 invariance within 3 stderr",
                  "CRN/independent agreement", "CRN stderr smaller"]
        if p["radii"]:
            gates.append(f"Delta nondecreasing over radii {p['radii']}")
    elif exp == "convergence":
        N_ref = p["N_ref"] or res.N_ref
        lines.append(f"N_list {p['N_list']} against N_ref {N_ref} at t={p['t']:g}")
        members *= len(p["N_list"]) + 1
        steps = math.ceil(p["t"] / res.flow.dt)
        gates.append("errors strictly decrease in N")
    elif exp == "closeness":
        members *= 3
        gates += ["gap at t=0 is zero", f"halving V halves the gap within {p['tolerance']:.0%}", "gap grows in t"]
    elif exp in ("invariance", "sample", "spectrum"):
        gates.append("t=0 statistics match closed Gaussian forms within 3 stderr")
        if exp != "sample":
            gates.append("t>0 statistics match t=0 within 3 combined stderr")
    lines.append(f"workload: {members} member trajectories x {steps} steps = {members * steps} member-steps")
    lines.append("gates:")
    lines += [f"  - {g}" for g in gates]
    return "\n".join(lines)


def metadata(res: Resolved, workers: int, started: float, elapsed: float) -> dict:
    m = res.measure
    return {
        "tool": "bbm-gibbs",
        "version": __version__,
        "config": res.cfg,
        "seed": res.cfg["seed"],
        "rng": "PCG64(SeedSequence(seed, spawn_key=(member,))), standard_normal",
        "workers": workers,
        "potential": None if m.V is None else {"label": m.V.label, "norm_inf": m.V.norm_inf,
                                                 "fingerprint": m.V.fingerprint()},
        "N_ref": res.N_ref,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "elapsed_seconds": elapsed,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bbm-gibbs", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=EXPERIMENTS + ("describe",))
    parser.add_argument("config", type=Path)
    args = parser.parse_args(argv)
    try:
        cfg = load(args.config)
        if args.command != "describe" and args.command != cfg["experiment"]:
            raise ConfigError(f"subcommand '{args.command}' does not match experiment '{cfg['experiment']}'")
        res = build(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "describe":
        print(plan(res))
        return EXIT_OK

    out = Path(cfg["output"])
    if not out.is_absolute():
        out = args.config.parent / out
    out.mkdir(parents=True, exist_ok=True)
    workers = default_workers()
    started = time.time()
    try:
        reports = execute(res, out, workers)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlowError, ContractionFailure, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    (out / "metadata.json").write_text(dumps(metadata(res, workers, started, time.time() - started)))
    write_report_json(out / "results.json", reports)
    write_report_csv(out / "results.csv", reports)
    for rep in reports:
        print(rep.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
