"""Gaussian measures on E_0^N: the Gibbs measure mu and its perturbation mu_V.

Under ``mu`` the coefficients are independent with ``a_n, b_n ~ N(0, 1/(1+n^2))``.
Under ``mu_V`` the head coefficients (modes <= N) are ``B_N g`` with
``B_N = Pi_N (1+V)^{-1/2} H^{-1} Pi_N`` and ``g`` a standard normal vector; an
optional tail of ``N_tail`` further modes is drawn from ``mu`` independently.

Random streams: member ``k`` of an ensemble seeded with ``seed`` draws from
``numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key=(k,))))`` using
``standard_normal`` (ziggurat).  Draws depend only on ``(seed, k)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import spectral as sp
from .operators import TrigOperator, build_inv_sqrt_n
from .potential import Potential
from .stats import StatReport, fit_line, mean_and_stderr


@dataclass(frozen=True)
class SeededRng:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def standard_normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)


def member_normals(seed: int, members, size: int) -> np.ndarray:
    """Rows of standard normals, row ``i`` from stream ``members[i]``."""
    members = np.asarray(members)
    out = np.empty((members.size, size))
    for i, k in enumerate(members):
        out[i] = SeededRng(seed, int(k)).standard_normal(size)
    return out


def build_B(V: Potential, N: int) -> TrigOperator:
    """Matrix of ``Pi_N (1+V)^{-1/2} H^{-1} Pi_N`` in basis order."""
    A = build_inv_sqrt_n(V, N)
    return TrigOperator(A.matrix * sp.h_multiplier(N, -1.0)[None, :], "B_N", dict(A.meta))


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    N: int
    kind: str = "mu"
    B: TrigOperator | None = None
    V: Potential | None = None
    N_tail: int = 0

    def __post_init__(self):
        if self.kind not in ("mu", "mu_v"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if (self.kind == "mu_v") != (self.B is not None):
            raise ValueError("B is required for mu_v and forbidden for mu")
        if self.B is not None and self.B.N != self.N:
            raise ValueError("B has the wrong order")
        if self.N < 0 or self.N_tail < 0:
            raise ValueError("orders must be nonnegative")

    @property
    def order(self) -> int:
        return self.N + self.N_tail

    @property
    def dim(self) -> int:
        return sp.dim(self.order)


def mu(N: int, N_tail: int = 0) -> GaussianSpec:
    return GaussianSpec(N, "mu", N_tail=N_tail)


def mu_v(V: Potential, N: int, N_tail: int = 0) -> GaussianSpec:
    return GaussianSpec(N, "mu_v", build_B(V, N), V, N_tail)


def _head_index(N: int, L: int) -> np.ndarray:
    """Positions of the order-N slots inside an order-L coefficient vector."""
    return np.concatenate([np.arange(N + 1), L + 1 + np.arange(N)])


def transform(spec: GaussianSpec, g: np.ndarray) -> np.ndarray:
    """Map standard normal rows ``g`` (shape (..., dim)) to field coefficients."""
    L = spec.order
    x = g * sp.h_multiplier(L, -1.0)
    if spec.kind == "mu_v":
        head = _head_index(spec.N, L)
        # one matrix-vector product per row: a batched product may round rows
        # differently depending on how many there are
        B = spec.B.matrix
        rows = g[..., head].reshape(-1, head.size)
        x[..., head] = np.array([B @ r for r in rows]).reshape(g.shape[:-1] + (head.size,))
    return x


def sample_mu(N: int, rng: SeededRng) -> sp.SpectralField:
    return sample(mu(N), rng)


def sample_mu_v(spec: GaussianSpec, rng: SeededRng) -> sp.SpectralField:
    if spec.kind != "mu_v":
        raise ValueError("sample_mu_v needs a perturbed spec")
    return sample(spec, rng)


def sample(spec: GaussianSpec, rng: SeededRng) -> sp.SpectralField:
    return sp.SpectralField(transform(spec, rng.standard_normal(spec.dim)))


def sample_members(spec: GaussianSpec, seed: int, members) -> sp.SpectralField:
    """Batch of fields; member ``k`` uses stream ``k`` whatever the batch."""
    return sp.SpectralField(transform(spec, member_normals(seed, members, spec.dim)))


def covariance(spec: GaussianSpec) -> TrigOperator:
    L = spec.order
    C = np.diag(sp.h_multiplier(L, -2.0))
    if spec.kind == "mu_v":
        head = _head_index(spec.N, L)
        B = spec.B.matrix
        C[np.ix_(head, head)] = B @ B.T
    return TrigOperator(C, "C")


def char_fn_closed(spec: GaussianSpec, lam: sp.SpectralField):
    """``E exp(i <lam, u>) = exp(-lam^T C lam / 2)`` for the centred Gaussian."""
    if lam.N > spec.order:
        raise ValueError("probe order exceeds the measure order")
    x = sp.pad(lam.coeffs, spec.order)
    C = covariance(spec).matrix
    q = np.einsum("...i,ij,...j->...", x, C, x)
    return np.exp(-0.5 * q) + 0j


def char_fn_conventions(lam: sp.SpectralField) -> dict:
    """Gibbs-measure characteristic functional under both H^{-1} conventions."""
    return {
        conv: float(np.exp(-0.5 * sp.h_minus1_seminorm(lam, conv) ** 2))
        for conv in ("orthonormal", "two_pi_scaled")
    }


def tail_diagnostic(spec: GaussianSpec, s: float, radii, samples: int, seed: int = 0) -> StatReport:
    """Exceedance frequencies ``P(|phi|_{H^s} > R)`` and the slope of log P in R^2.

    Verdicts: the frequencies decrease in R, the fitted slope is negative, and
    log P is concave in R^2 up to three standard errors.
    """
    if not s < 0.5:
        raise ValueError("tail diagnostic needs s < 1/2")
    radii = np.asarray(sorted(radii), float)
    u = sample_members(spec, seed, np.arange(samples))
    norms = sp.sobolev_norm(u, s)
    hits = norms[:, None] > radii[None, :]
    p, p_err = mean_and_stderr(hits.astype(float))
    rep = StatReport("tail_diagnostic", count=samples, seed=seed)
    rep.estimates.update(radius=radii, probability=p)
    rep.stderr["probability"] = p_err
    rep.meta.update(s=s, N=spec.N, kind=spec.kind)
    ok = p > 0
    logp = np.log(p[ok])
    logp_err = np.sqrt((1 - p[ok]) / (samples * p[ok]))
    r2 = radii[ok] ** 2
    slope, intercept = fit_line(r2, logp) if ok.sum() >= 2 else (np.nan, np.nan)
    rep.fits.update(slope_logp_vs_R2=slope, intercept=intercept)
    rep.estimates["log_probability"] = logp
    rep.stderr["log_probability"] = logp_err
    rep.gate("frequencies nonincreasing", float(np.max(np.diff(p), initial=0.0)), 0.0)
    rep.gate("negative log-linear slope", slope, 0.0, passed=bool(slope < 0))
    if ok.sum() >= 3:
        # divided second differences in R^2, tolerated up to 3 propagated stderr
        d1 = np.diff(logp) / np.diff(r2)
        d2 = np.diff(d1)
        e1 = np.sqrt(logp_err[1:] ** 2 + logp_err[:-1] ** 2) / np.diff(r2)
        e2 = np.sqrt(e1[1:] ** 2 + e1[:-1] ** 2)
        excess = float(np.max(d2 - 3 * e2))
        rep.fits["second_differences"] = d2
        rep.gate("log P concave in R^2", excess, 0.0)
    return rep


def high_mode_tail(spec: GaussianSpec, N0_list, radius: float, samples: int, seed: int = 0) -> StatReport:
    """``P(|(1 - Pi_N0) phi|_{L2} > R)`` per N0, with the Gaussian-tail rate
    ``-log P / R^2`` estimated from a half-normal quantile fit."""
    u = sample_members(spec, seed, np.arange(samples))
    rep = StatReport("high_mode_tail", count=samples, seed=seed)
    probs, rates = [], []
    for N0 in N0_list:
        t = sp.l2_norm(sp.tail(u, N0))
        p = float(np.mean(t > radius))
        probs.append(p)
        # rate of the tail exp(-c R^2): fit on the empirical upper quantiles
        q = np.quantile(t, [0.9, 0.99, 0.999])
        z = norm.isf([0.1, 0.01, 0.001])
        slope, _ = fit_line(q**2, z**2 / 2)
        rates.append(slope)
    rep.estimates.update(N0=np.asarray(N0_list, float), probability=np.array(probs), rate=np.array(rates))
    rep.fits["rate_over_N0"] = (np.array(rates) / np.asarray(N0_list, float)).tolist()
    rep.gate("rate increases with N0", float(np.min(np.diff(rates))), 0.0, passed=bool(np.all(np.diff(rates) > 0)))
    return rep
