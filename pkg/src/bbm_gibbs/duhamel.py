"""Duhamel fixed-point oracle, local horizon calibration and Galerkin convergence.

The head solution solves

    u(t) = E(t) u0 + int_0^t E(t - s) Q(u(s)) ds,     E(t) = exp(-t D),

with ``D = K`` and ``Q(u) = -K Pi_N(u^2)/2`` for BBM, or ``D = D_N`` and
``Q(u) = -V_N^{-1} K Pi_N((V_N u)^2)/2`` for the perturbed flow.  Using
``E(t - s) = E(t) E(-s)`` the integral becomes a cumulative trapezoid sum, so a
Picard sweep over all nodes costs one batched nonlinearity evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import expm

from . import spectral as sp
from .flows import FlowError, FlowSpec, evolve, rotate_coeffs
from .stats import StatReport, fit_loglog

NODES_PER_UNIT_TIME = 64
MIN_NODES = 64


class ContractionFailure(FlowError):
    def __init__(self, message: str, factor: float):
        super().__init__(message, residual=factor)
        self.factor = factor


@dataclass
class PicardResult:
    field: sp.SpectralField
    contraction: float
    iterations: int
    residuals: list
    richardson_error: float
    nodes: int
    path: np.ndarray = field(repr=False, default=None)


def semigroup(spec: FlowSpec, t: float) -> np.ndarray:
    """Matrix of ``exp(-t D)`` on the head space."""
    if spec.V is None:
        return rotate_coeffs(np.eye(sp.dim(spec.N)), t).T
    return expm(-t * spec.system.D)


def _powers(step: np.ndarray, n: int) -> np.ndarray:
    """``step^k`` for k = 0..n, so node propagators cost one exponential."""
    out = np.empty((n + 1,) + step.shape)
    out[0] = np.eye(step.shape[0])
    for k in range(1, n + 1):
        out[k] = step @ out[k - 1]
    return out


def _nonlinear(spec: FlowSpec, x: np.ndarray) -> np.ndarray:
    sys = spec.system
    return sys.rhs(x) + x @ sys.D.T


def _fixed_point(spec: FlowSpec, x0: np.ndarray, t: float, n: int, tol: float, max_iter: int):
    s = np.linspace(0.0, t, n + 1)
    fwd = _powers(semigroup(spec, t / n), n)
    bwd = _powers(semigroup(spec, -t / n), n)
    u = np.einsum("kij,j->ki", fwd, x0)
    scale = max(1.0, float(np.linalg.norm(x0)))
    residuals = []
    for it in range(1, max_iter + 1):
        g = np.einsum("kij,kj->ki", bwd, _nonlinear(spec, u))
        G = cumulative_trapezoid(g, s, axis=0, initial=0.0)
        new = np.einsum("kij,kj->ki", fwd, x0[None, :] + G)
        r = float(np.max(np.linalg.norm(new - u, axis=-1)))
        residuals.append(r)
        u = new
        if not np.isfinite(r) or r > 1e6 * scale:
            raise ContractionFailure(f"Picard iterates diverge at t={t:g}", _contraction(residuals, scale))
        if r <= tol * scale:
            return u, it, residuals
        if len(residuals) >= 4 and residuals[-1] > residuals[-2] > residuals[-3] > residuals[-4]:
            raise ContractionFailure(f"Picard iterates diverge at t={t:g}", _contraction(residuals, scale))
    raise ContractionFailure(
        f"Picard iteration did not reach tol in {max_iter} sweeps at t={t:g}", _contraction(residuals, scale)
    )


def _contraction(residuals, scale: float) -> float:
    """Largest ratio of successive sup-in-time residuals above the rounding floor."""
    r = np.asarray(residuals)
    keep = r[:-1] > 1e-12 * scale
    if not np.any(keep):
        return 0.0
    return float(np.max(r[1:][keep] / r[:-1][keep]))


def picard_duhamel(spec: FlowSpec, u0: sp.SpectralField, t: float, tol: float | None = None,
                   nodes: int | None = None, max_iter: int = 200) -> PicardResult:
    """Fixed point of the Duhamel map at time ``t`` with a Richardson-extrapolated
    trapezoid rule (nodes ``n`` and ``2n``); composite tails rotate exactly."""
    tol = spec.tol if tol is None else tol
    L = spec.order
    x = sp.pad(u0.coeffs, L)
    if spec.kind == "linear" or t == 0:
        return PicardResult(sp.SpectralField(rotate_coeffs(x, t)), 0.0, 0, [], 0.0, 0)
    n = nodes or max(MIN_NODES, math.ceil(NODES_PER_UNIT_TIME * abs(t)))
    head = sp.pad(x, spec.N)
    coarse, _, _ = _fixed_point(spec, head, t, n, tol, max_iter)
    fine, iters, residuals = _fixed_point(spec, head, t, 2 * n, tol, max_iter)
    corr = (fine[-1] - coarse[-1]) / 3.0
    out = rotate_coeffs(x, t)
    N = spec.N
    out[: N + 1] = fine[-1][: N + 1] + corr[: N + 1]
    out[L + 1 : L + 1 + N] = fine[-1][N + 1 :] + corr[N + 1 :]
    scale = max(1.0, float(np.linalg.norm(head)))
    return PicardResult(sp.SpectralField(out), _contraction(residuals, scale), iters, residuals,
                        float(np.linalg.norm(corr)), 2 * n, fine)


def contraction_factor(spec: FlowSpec, u0: sp.SpectralField, t: float) -> float:
    """Measured Picard contraction at horizon ``t`` (infinite if the iteration fails)."""
    n = max(MIN_NODES, math.ceil(NODES_PER_UNIT_TIME * abs(t)))
    head = sp.pad(u0.coeffs, spec.N)
    try:
        _, _, res = _fixed_point(spec, head, t, n, spec.tol, 200)
    except ContractionFailure as err:
        return max(err.factor, 1.0)
    return _contraction(res, max(1.0, float(np.linalg.norm(head))))


@dataclass
class Horizon:
    T: float
    C_hat: float
    R: float
    s: float
    N: int
    bracketed: bool

    def horizon(self, R: float) -> float:
        """``1 / (8 C_hat^2 R)`` for data of H^s size ``R``."""
        return 1.0 / (8.0 * self.C_hat**2 * R)


def calibrate_horizon(spec: FlowSpec, u0: sp.SpectralField, s: float, t_max: float = 256.0,
                      target: float = 0.5, steps: int = 30) -> Horizon:
    """Bisect on t for the time at which the Picard contraction reaches ``target``;
    then ``C_hat = 1 / sqrt(8 T R)`` with ``R = |u0|_{H^s}``."""
    R = float(sp.sobolev_norm(u0, s))
    lo, hi = 0.0, min(1.0, t_max)
    # grow the bracket geometrically before bisecting
    while not (bracketed := contraction_factor(spec, u0, hi) > target) and hi < t_max:
        lo, hi = hi, min(2.0 * hi, t_max)
    if bracketed:
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if contraction_factor(spec, u0, mid) > target:
                hi = mid
            else:
                lo = mid
    T = lo if bracketed else t_max
    return Horizon(T, 1.0 / math.sqrt(8.0 * T * R), R, s, spec.N, bracketed)


def semigroup_growth(spec: FlowSpec, times) -> float:
    """Smallest ``c`` with ``|exp(-t D)|_{L2 -> L2} <= exp(c |t|)`` over ``times``."""
    rates = []
    for t in times:
        if t == 0:
            continue
        norm = np.linalg.norm(semigroup(spec, t), 2)
        rates.append(math.log(norm) / abs(t))
    return float(max(rates, default=0.0))


def _composite(spec: FlowSpec) -> FlowSpec:
    if spec.kind == "galerkin-bbm":
        return spec.with_(kind="composite-bbm")
    if spec.kind == "perturbed":
        return spec.with_(kind="composite-perturbed")
    return spec


def flow_convergence(u0: sp.SpectralField, N_list, t: float, template: FlowSpec,
                     N_ref: int | None = None, s: float | None = None) -> StatReport:
    """``|u_{N_ref}(t) - u_N(t)|_{L2}`` for each N, all flows composite on the
    same total order so that only the nonlinear truncation differs."""
    N_list = sorted(int(n) for n in N_list)
    N_ref = 4 * max(N_list) if N_ref is None else int(N_ref)
    L = max(u0.N, N_ref)
    base = _composite(template)

    def run(N):
        spec = base.with_(N=N, N_tail=L - N)
        return evolve(spec, u0, times=[t]).final.coeffs

    ref = run(N_ref)
    errors = np.array([np.sqrt(np.sum((run(N) - ref) ** 2, axis=-1)) for N in N_list])
    rep = StatReport("flow_convergence", count=int(np.prod(u0.batch_shape or (1,))))
    rep.estimates.update(N=np.array(N_list, float), error=errors)
    rep.meta.update(N_ref=N_ref, t=t, kind=base.kind, dt=base.dt, s=s)
    decreasing = np.all(np.diff(errors, axis=0) < 0, axis=0)
    rep.gate("errors strictly decrease in N", float(np.sum(~np.atleast_1d(decreasing))), 0.0)
    mean_err = errors.reshape(len(N_list), -1).mean(axis=1)
    if np.all(mean_err > 0):
        rep.fits["decay_exponent"] = fit_loglog(N_list, mean_err)[0]
    return rep
