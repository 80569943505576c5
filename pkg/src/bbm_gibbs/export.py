"""CSV and JSON writers for trajectories and reports (17 significant digits)."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import spectral as sp
from .flows import Trajectory
from .stats import StatReport, _jsonable

FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def trajectory_rows(traj: Trajectory, member: int | None = None):
    """``(t, n, a_n, b_n)`` rows; ``b_0`` is written as 0."""
    coeffs = traj.coeffs if member is None else traj.coeffs[:, member]
    if coeffs.ndim != 2:
        raise ValueError("select a single member of a batched trajectory")
    N = sp.order_of(coeffs.shape[-1])
    for t, x in zip(traj.times, coeffs):
        for n in range(N + 1):
            yield t, n, x[n], (x[N + n] if n else 0.0)


def write_trajectory(path, traj: Trajectory, meta: dict | None = None, member: int | None = None) -> Path:
    """Write ``path`` (CSV) plus a ``.json`` sidecar with invariants and diagnostics."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mode", "a_n", "b_n"])
        for t, n, a, b in trajectory_rows(traj, member):
            w.writerow([fmt(t), n, fmt(a), fmt(b)])
    conserved = traj.conserved if member is None else {k: np.asarray(v)[:, member] for k, v in traj.conserved.items()}
    side = {
        "meta": meta or {},
        "times": traj.times,
        "conserved": conserved,
        "diagnostics": traj.diagnostics,
    }
    path.with_suffix(".json").write_text(dumps(side))
    return path


def dumps(obj) -> str:
    return json.dumps(_round_trip(_jsonable(obj)), indent=2, sort_keys=True)


def _round_trip(v):
    # json already prints the shortest repr that round-trips a double
    if isinstance(v, dict):
        return {k: _round_trip(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_round_trip(x) for x in v]
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


def write_report_csv(path, reports) -> Path:
    """One row per (report, estimator, index) with value and standard error."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["report", "estimator", "index", "value", "stderr"])
        for rep in reports:
            for key, idx, val, err in rep.rows():
                w.writerow([rep.name, key, ";".join(str(i) for i in idx), fmt(val), fmt(err)])
    return path


def write_report_json(path, reports) -> Path:
    path = Path(path)
    path.write_text(dumps({"reports": [r.to_dict() for r in reports], "passed": all(r.passed for r in reports)}))
    return path


def load_report_json(path) -> list:
    data = json.loads(Path(path).read_text())
    return data["reports"]


__all__ = ["write_trajectory", "write_report_csv", "write_report_json", "load_report_json", "StatReport", "dumps"]
