"""Time evolution on E_0^N: the exact linear flow, the Galerkin BBM flow, the
V-perturbed flow, and composite flows that add an exactly rotating tail.

Sign convention: every flow solves ``u_t = -K(...)`` with ``K = (1 - d_xx)^{-1} d_x``.
The linear part therefore rotates each mode pair by the angle ``+omega_n t``,
``omega_n = n / (1 + n^2)``; for example ``cos x`` becomes ``cos(x - t/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import spectral as sp
from .operators import build_d_n, build_v_n, build_w_n, checked_inverse
from .potential import Potential

KINDS = ("linear", "galerkin-bbm", "perturbed", "composite-bbm", "composite-perturbed")
INTEGRATORS = ("implicit-midpoint", "rk4-oracle", "picard-duhamel")
BLOWUP_NORM = 1e6


class FlowError(RuntimeError):
    """Numerical failure of a flow; carries the step and offending members."""

    def __init__(self, message: str, step: int | None = None, members=None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.members = [] if members is None else list(members)
        self.residual = residual


class NonConvergence(FlowError):
    pass


class BlowUp(FlowError):
    pass


@dataclass(frozen=True, eq=False)
class FlowSpec:
    kind: str
    N: int
    N_tail: int = 0
    V: Potential | None = None
    integrator: str = "implicit-midpoint"
    dt: float = 1e-3
    tol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not (self.dt > 0 and self.tol > 0):
            raise ValueError("dt and tol must be positive")
        if self.N < 0 or self.N_tail < 0:
            raise ValueError("orders must be nonnegative")
        perturbed = self.kind in ("perturbed", "composite-perturbed")
        if perturbed != (self.V is not None):
            raise ValueError("V is required for perturbed kinds and forbidden otherwise")
        if not self.kind.startswith("composite") and self.kind != "linear" and self.N_tail:
            raise ValueError("only composite and linear flows carry a tail")

    @property
    def order(self) -> int:
        return self.N + self.N_tail

    @property
    def perturbed(self) -> bool:
        return self.V is not None

    @cached_property
    def system(self) -> "HeadSystem":
        return HeadSystem(self.N, self.V)

    def with_(self, **changes) -> "FlowSpec":
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        vals.update(changes)
        return FlowSpec(**vals)


class HeadSystem:
    """Right-hand side of the finite-dimensional (head) flow and its invariants."""

    def __init__(self, N: int, V: Potential | None):
        self.N = N
        self.V = V
        self.K = sp.k_matrix(N)
        E, P = sp.square_matrices(N)
        if V is None:
            self.D = self.K
            synth, out = E, self.K
        else:
            self.VN = build_v_n(V, N).matrix
            self.VN_inv = checked_inverse(self.VN, "V_N")
            self.D = build_d_n(V, N).matrix
            self.W = build_w_n(V, N).matrix
            synth, out = self.VN.T @ E, self.VN_inv @ self.K
        # rhs(x) = x @ lin + (x @ synth)**2 @ quad
        self._lin = -self.D.T
        self._synth = synth
        self._quad = -0.5 * P @ out.T

    def rhs(self, x: np.ndarray) -> np.ndarray:
        g = x @ self._synth
        return x @ self._lin + (g * g) @ self._quad

    def quadratic(self, x: np.ndarray) -> np.ndarray:
        """The quadratic invariant: h1 energy for BBM, E_V for the perturbed flow."""
        if self.V is None:
            return 0.5 * np.sum(sp.h_multiplier(self.N, 2.0) * x**2, axis=-1)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.W, x)

    def hamiltonian(self, x: np.ndarray) -> np.ndarray:
        w = x if self.V is None else x @ self.VN.T
        f = sp.SpectralField(w)
        return 0.5 * np.sum(w**2, axis=-1) + sp.integrate_power(f, 3) / 6.0


# -- linear flow -------------------------------------------------------------------


def rotate_coeffs(x: np.ndarray, t: float) -> np.ndarray:
    N = sp.order_of(x.shape[-1])
    th = sp.dispersion(N)[1:] * t
    c, s = np.cos(th), np.sin(th)
    a, b = x[..., 1 : N + 1], x[..., N + 1 :]
    out = np.array(x, dtype=float)
    out[..., 1 : N + 1] = a * c - b * s
    out[..., N + 1 :] = b * c + a * s
    return out


def linear_flow(u0: sp.SpectralField, t: float) -> sp.SpectralField:
    """Exact solution of ``(1 - d_xx) u_t + u_x = 0``."""
    return sp.SpectralField(rotate_coeffs(u0.coeffs, t))


# -- right-hand sides ----------------------------------------------------------------


def bbm_rhs_coeffs(x: np.ndarray) -> np.ndarray:
    N = sp.order_of(x.shape[-1])
    return -sp.apply_k_coeffs(x + 0.5 * sp.square_coeffs(x, N))


def bbm_rhs(u: sp.SpectralField, N: int | None = None) -> sp.SpectralField:
    """``-K_N (u + Pi_N(u^2)/2)``."""
    N = u.N if N is None else N
    return sp.SpectralField(bbm_rhs_coeffs(sp.pad(u.coeffs, N)))


def perturbed_rhs(u: sp.SpectralField, V: Potential, N: int | None = None, form: str = "j") -> sp.SpectralField:
    """``-J_N (V_N^2 u + V_N Pi_N (V_N u)^2 / 2)``.

    ``form="j"`` evaluates the structure-matrix form through ``D_N``;
    ``form="w"`` solves ``W_N u_t = -V_N d_x (V_N u + Pi_N (V_N u)^2 / 2)``.
    """
    N = u.N if N is None else N
    x = sp.pad(u.coeffs, N)
    if form == "j":
        return sp.SpectralField(HeadSystem(N, V).rhs(x))
    if form == "w":
        VN = build_v_n(V, N).matrix
        W = build_w_n(V, N).matrix
        w = x @ VN.T
        y = (w + 0.5 * sp.square_coeffs(w, N)) @ sp.dx_matrix(N).T @ VN.T
        return sp.SpectralField(-np.linalg.solve(W, y.T).T)
    raise ValueError(f"unknown form {form!r}")


# -- conserved quantities ---------------------------------------------------------------


def h1_energy(u: sp.SpectralField):
    """``1/2 int u (1 - d_xx) u``."""
    return 0.5 * np.sum(sp.h_multiplier(u.N, 2.0) * u.coeffs**2, axis=-1)


def hamiltonian_h(u: sp.SpectralField, V: Potential | None = None):
    """``1/2 |V_N u|^2 + 1/6 int (V_N u)^3``; with no V this is the BBM
    Hamiltonian ``int u^2/2 + u^3/6``."""
    return HeadSystem(u.N, V).hamiltonian(u.coeffs)


def energy_ev(u: sp.SpectralField, V: Potential | None = None):
    """``1/2 u^T W_N u``."""
    if V is None:
        return h1_energy(u)
    return HeadSystem(u.N, V).quadratic(u.coeffs)


# -- trajectories ---------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (len(times), *batch, dim)
    conserved: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def states(self) -> list:
        return [sp.SpectralField(c) for c in self.coeffs]

    @property
    def final(self) -> sp.SpectralField:
        return sp.SpectralField(self.coeffs[-1])

    def at(self, t: float) -> sp.SpectralField:
        i = int(np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0])
        return sp.SpectralField(self.coeffs[i])

    def drift(self, name: str):
        """Largest relative deviation of a conserved series from its initial value."""
        q = np.asarray(self.conserved[name])
        q0 = q[0]
        return np.max(np.abs(q - q0), axis=0) / np.maximum(np.abs(q0), np.finfo(float).tiny)


def _output_times(t_end: float, times) -> np.ndarray:
    if times is None:
        return np.array([0.0, float(t_end)]) if t_end != 0 else np.array([0.0])
    ts = np.asarray(times, dtype=float)
    if ts[0] != 0:
        ts = np.concatenate([[0.0], ts])
    d = np.diff(ts)
    if len(ts) > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("output times must be strictly monotone and start at 0")
    return ts


def _midpoint_step(sys: HeadSystem, x: np.ndarray, h: float, tol: float, max_iter: int, step: int, members):
    """One implicit-midpoint step by fixed-point iteration, member by member."""
    y = x + h * sys.rhs(x)
    active = np.arange(x.shape[0])
    iters = 0
    worst = 0.0
    while active.size:
        if iters >= max_iter:
            bad = members[active]
            raise NonConvergence(
                f"implicit midpoint did not converge at step {step} (residual {worst:.3g}, members {bad[:5].tolist()})",
                step=step,
                members=bad,
                residual=worst,
            )
        full = active.size == x.shape[0]
        xa, ya = (x, y) if full else (x[active], y[active])
        ynew = xa + h * sys.rhs(0.5 * (xa + ya))
        err = np.max(np.abs(ynew - ya), axis=-1) / np.maximum(1.0, np.max(np.abs(ynew), axis=-1))
        if full:
            y = ynew
        else:
            y[active] = ynew
        iters += 1
        done = err <= tol
        worst = float(np.max(err, initial=0.0))
        active = active[~done]
    return y, iters


def _rk4_step(sys: HeadSystem, x: np.ndarray, h: float):
    k1 = sys.rhs(x)
    k2 = sys.rhs(x + 0.5 * h * k1)
    k3 = sys.rhs(x + 0.5 * h * k2)
    k4 = sys.rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_head(spec: FlowSpec, x0: np.ndarray, times: np.ndarray, members=None):
    """Step the head system through ``times`` (starting at times[0] = 0).

    Returns the stacked states and per-step diagnostics.  ``x0`` has shape
    ``(count, dim)``.
    """
    sys = spec.system
    members = np.arange(x0.shape[0]) if members is None else np.asarray(members)
    out = np.empty((len(times),) + x0.shape)
    out[0] = x0
    x = np.array(x0)
    step = 0
    max_iters = 0
    for i in range(1, len(times)):
        span = times[i] - times[i - 1]
        n = max(1, math.ceil(abs(span) / spec.dt - 1e-9))
        h = span / n
        for _ in range(n):
            step += 1
            if spec.integrator == "rk4-oracle":
                x = _rk4_step(sys, x, h)
            else:
                x, it = _midpoint_step(sys, x, h, spec.tol, spec.max_iter, step, members)
                max_iters = max(max_iters, it)
            norms = np.sqrt(np.sum(x**2, axis=-1))
            if not np.all(np.isfinite(norms)) or np.any(norms > BLOWUP_NORM):
                bad = members[~(norms <= BLOWUP_NORM)]
                raise BlowUp(f"L2 norm exceeded {BLOWUP_NORM:g} at step {step} (members {bad[:5].tolist()})", step, bad)
        out[i] = x
    return out, {"steps": step, "max_iterations": max_iters}


def evolve(spec: FlowSpec, u0: sp.SpectralField, t_end: float | None = None, times=None, members=None) -> Trajectory:
    """Integrate ``u0`` (single field or batch) and record invariants at output times.

    Composite kinds evolve ``Pi_N u0`` under the nonlinear head flow and the
    remainder under the exact linear flow.
    """
    if t_end is None and times is None:
        raise ValueError("give t_end or times")
    ts = _output_times(t_end if t_end is not None else 0.0, times)
    if u0.N > spec.order and np.any(sp.tail(u0, spec.order).coeffs):
        raise ValueError(f"initial datum of order {u0.N} exceeds flow order {spec.order}")
    L = spec.order
    x0 = sp.pad(u0.coeffs, L)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0).reshape(-1, sp.dim(L))

    if spec.kind == "linear":
        coeffs = np.stack([rotate_coeffs(x0, t) for t in ts])
        diag = {"steps": 0}
    elif spec.integrator == "picard-duhamel":
        from .duhamel import picard_duhamel

        coeffs = np.empty((len(ts),) + x0.shape)
        coeffs[0] = x0
        diag = {"contraction": []}
        for i, t in enumerate(ts[1:], 1):
            for j in range(x0.shape[0]):
                res = picard_duhamel(spec, sp.SpectralField(x0[j]), t)
                coeffs[i, j] = res.field.coeffs
                diag["contraction"].append(res.contraction)
    else:
        head = sp.pad(x0, spec.N)
        hs, diag = integrate_head(spec, head, ts, members)
        coeffs = np.stack([_join(hs[i], rotate_coeffs(x0, t), spec.N, L) for i, t in enumerate(ts)])

    conserved = _conserved_series(spec, coeffs)
    if single:
        coeffs = coeffs[:, 0]
        conserved = {k: v[:, 0] for k, v in conserved.items()}
    return Trajectory(ts, coeffs, conserved, diag)


def _join(head: np.ndarray, full: np.ndarray, N: int, L: int) -> np.ndarray:
    """Replace the modes <= N of an order-L array by ``head``."""
    out = np.array(full)
    out[..., : N + 1] = head[..., : N + 1]
    out[..., L + 1 : L + 1 + N] = head[..., N + 1 :]
    out[..., N + 1 : L + 1] = full[..., N + 1 : L + 1]
    return out


def _conserved_series(spec: FlowSpec, coeffs: np.ndarray) -> dict:
    N = spec.N
    full = sp.SpectralField(coeffs)
    out = {"l2": sp.l2_norm(full)}
    if spec.kind == "linear":
        out["h1_energy"] = h1_energy(full)
        return out
    head = sp.pad(coeffs, N)
    tail_h1 = h1_energy(full) - h1_energy(sp.SpectralField(head))
    sys = spec.system
    if spec.perturbed:
        out["energy_ev"] = sys.quadratic(head) + tail_h1
        out["hamiltonian_h"] = sys.hamiltonian(head)
    else:
        out["h1_energy"] = h1_energy(full)
        out["hamiltonian_h"] = sys.hamiltonian(head)
    return out


def split_order(u0: sp.SpectralField, T: float, C_hat: float) -> int:
    """Smallest N with ``|(1 - Pi_N) u0|_{L2} <= 1 / (C_hat (1 + |T|))``."""
    if not C_hat > 0:
        raise ValueError("C_hat must be positive")
    target = 1.0 / (C_hat * (1.0 + abs(T)))
    x = u0.coeffs
    n = sp.mode_numbers(u0.N)
    energy = np.array([np.sum(x[..., n == k] ** 2) for k in range(u0.N + 1)])
    # tail mass beyond N, for N = 0..u0.N
    tails = np.sqrt(np.maximum(np.cumsum(energy[::-1])[::-1][1:], 0.0))
    tails = np.concatenate([tails, [0.0]])
    return int(np.flatnonzero(tails <= target)[0])
