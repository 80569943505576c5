"""Report containers, streaming moments and small fitting helpers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Verdict:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: value={self.value:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()


@dataclass
class StatReport:
    """Estimates with Monte Carlo standard errors and gated verdicts."""

    name: str
    estimates: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    count: int = 0
    seed: int | None = None
    verdicts: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def gate(self, name: str, value: float, threshold: float, passed: bool | None = None, detail: str = "") -> Verdict:
        """Record a verdict; by default it passes when ``value <= threshold``."""
        value, threshold = float(value), float(threshold)
        ok = bool(value <= threshold) if passed is None else bool(passed)
        v = Verdict(name, ok, value, threshold, detail)
        self.verdicts.append(v)
        return v

    def summary(self) -> str:
        lines = [f"{self.name} (count={self.count}, seed={self.seed})"]
        lines += [v.line() for v in self.verdicts]
        for k, val in self.fits.items():
            lines.append(f"  fit {k} = {_jsonable(val)}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "count": self.count,
            "seed": self.seed,
            "estimates": {k: _jsonable(v) for k, v in self.estimates.items()},
            "stderr": {k: _jsonable(v) for k, v in self.stderr.items()},
            "fits": {k: _jsonable(v) for k, v in self.fits.items()},
            "verdicts": [
                {"name": v.name, "passed": v.passed, "value": v.value, "threshold": v.threshold, "detail": v.detail}
                for v in self.verdicts
            ],
            "passed": self.passed,
            "meta": {k: _jsonable(v) for k, v in self.meta.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def rows(self):
        """Flat ``(estimator, index, value, stderr)`` rows for CSV output."""
        for key, val in self.estimates.items():
            arr = np.asarray(val)
            err = np.asarray(self.stderr.get(key, np.full(arr.shape, np.nan)))
            if np.iscomplexobj(arr):
                for part, f in (("re", np.real), ("im", np.imag)):
                    e = f(err) if np.iscomplexobj(err) else err
                    for idx in np.ndindex(arr.shape):
                        yield f"{key}.{part}", idx, float(f(arr)[idx]), float(np.broadcast_to(e, arr.shape)[idx])
            else:
                for idx in np.ndindex(arr.shape):
                    yield key, idx, float(arr[idx]), float(np.broadcast_to(err, arr.shape)[idx])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            return {"re": v.real.tolist(), "im": v.imag.tolist()}
        return v.tolist()
    if isinstance(v, complex) or isinstance(v, np.complexfloating):
        return {"re": float(v.real), "im": float(v.imag)}
    if isinstance(v, np.generic):
        return v.item()
    return v


class MomentAccumulator:
    """Running mean and centred second moment (Welford / Chan merge)."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, batch) -> "MomentAccumulator":
        batch = np.asarray(batch)
        other = MomentAccumulator(batch.shape[1:])
        other.count = batch.shape[0]
        if other.count:
            other.mean = batch.mean(axis=0)
            other.m2 = ((batch - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        n = self.count + other.count
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, np.array(other.mean), np.array(other.m2)
            return self
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.count = n
        return self

    @property
    def variance(self):
        return self.m2 / (self.count - 1)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.count)


def mean_and_stderr(samples, axis: int = 0):
    """Sample mean and ``stddev / sqrt(count)`` along ``axis``."""
    samples = np.asarray(samples)
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(np.real(mean))
    if np.iscomplexobj(samples):
        sr = samples.real.std(axis=axis, ddof=1) / np.sqrt(n)
        si = samples.imag.std(axis=axis, ddof=1) / np.sqrt(n)
        return mean, sr + 1j * si
    return mean, samples.std(axis=axis, ddof=1) / np.sqrt(n)


def fit_loglog(x, y):
    """Least-squares slope and intercept of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def fit_line(x, y, weights=None):
    slope, intercept = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1, w=weights)
    return float(slope), float(intercept)
