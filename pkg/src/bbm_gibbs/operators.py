"""Dense operators on E_0^N built from the potential V.

Matrices act on coefficient vectors in basis order (c_0, c_1..c_N, s_1..s_N).
Multiplication by a function ``g`` is assembled from the Fourier coefficients of
``g`` (a Toeplitz matrix in the e^{ikx} basis) and conjugated to the real basis,
which is exact for the compression to E_0^N once coefficients up to |k| = 2N are
known.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spectral as sp
from .potential import Potential
from .stats import StatReport, fit_loglog

MAX_CONDITION = 1e8


class SingularOperator(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class TrigOperator:
    matrix: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator matrix must be square")
        sp.order_of(m.shape[0])
        if not np.all(np.isfinite(m)):
            raise ValueError("operator entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self) -> int:
        return sp.order_of(self.matrix.shape[0])

    @property
    def T(self) -> "TrigOperator":
        return TrigOperator(self.matrix.T, f"{self.name}^T")

    def __matmul__(self, other):
        if isinstance(other, TrigOperator):
            return TrigOperator(self.matrix @ other.matrix, f"{self.name}{other.name}")
        if isinstance(other, sp.SpectralField):
            return self.apply(other)
        return self.matrix @ other

    def apply(self, u: sp.SpectralField) -> sp.SpectralField:
        return sp.SpectralField(sp.pad(u.coeffs, self.N) @ self.matrix.T)

    def inv(self) -> "TrigOperator":
        return TrigOperator(checked_inverse(self.matrix, self.name), f"{self.name}^-1")

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    def antisymmetry_defect(self) -> float:
        return float(np.max(np.abs(self.matrix + self.matrix.T)))


def checked_inverse(m: np.ndarray, name: str = "") -> np.ndarray:
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularOperator(f"operator {name or '?'} has condition number {cond:.3g} > {MAX_CONDITION:.0e}")
    return np.linalg.inv(m)


# -- real <-> complex exponential basis ---------------------------------------


def _basis_change(N: int):
    """``T`` maps real coefficients to e^{ikx} coefficients ordered k = -N..N."""
    d = sp.dim(N)
    T = np.zeros((d, d), dtype=complex)
    T[N, 0] = 1 / sp.SQRT_2PI
    for n in range(1, N + 1):
        T[N + n, n] = 1 / (2 * sp.SQRT_PI)
        T[N + n, N + n] = -1j / (2 * sp.SQRT_PI)
        T[N - n, n] = 1 / (2 * sp.SQRT_PI)
        T[N - n, N + n] = 1j / (2 * sp.SQRT_PI)
    Tinv = np.zeros((d, d), dtype=complex)
    Tinv[0, N] = sp.SQRT_2PI
    for n in range(1, N + 1):
        Tinv[n, N + n] = sp.SQRT_PI
        Tinv[n, N - n] = sp.SQRT_PI
        Tinv[N + n, N + n] = 1j * sp.SQRT_PI
        Tinv[N + n, N - n] = -1j * sp.SQRT_PI
    return T, Tinv


def multiplication_matrix(ghat: np.ndarray, N: int) -> np.ndarray:
    """Real matrix of ``Pi_N g Pi_N`` from the coefficients ``ghat[k]``, k >= 0,
    of a real function ``g = sum_k ghat_k e^{ikx}``."""
    need = 2 * N + 1
    g = np.zeros(need, dtype=complex)
    m = min(need, ghat.size)
    g[:m] = ghat[:m]
    k = np.arange(-N, N + 1)
    diff = k[:, None] - k[None, :]
    Mc = np.where(diff >= 0, g[np.abs(diff)], np.conj(g[np.abs(diff)]))
    T, Tinv = _basis_change(N)
    R = Tinv @ Mc @ T
    return R.real


def exponential_row_norm(op: TrigOperator) -> float:
    """``sup_n sum_m |g^n_m|`` with entries taken in the e^{ikx} basis."""
    T, Tinv = _basis_change(op.N)
    Mc = T @ op.matrix @ Tinv
    return float(np.max(np.sum(np.abs(Mc), axis=1)))


def function_operator(V: Potential, f, N: int, name: str = "") -> TrigOperator:
    ghat, dropped = V.function_coeffs(f, 2 * N)
    return TrigOperator(multiplication_matrix(ghat, N), name, {"band_limit_l1_error": dropped, "V": V.fingerprint()})


def sqrt_factor(V):
    return np.sqrt(1.0 + V)


def inv_sqrt_factor(V):
    return 1.0 / np.sqrt(1.0 + V)


# -- builders --------------------------------------------------------------------


def k_operator(N: int) -> TrigOperator:
    return TrigOperator(sp.k_matrix(N), "K")


def h_operator(N: int, s: float) -> TrigOperator:
    return TrigOperator(np.diag(sp.h_multiplier(N, s)), f"H^{s:g}")


def build_v_n(V: Potential, N: int) -> TrigOperator:
    """``V_N = Pi_N sqrt(1 + V) Pi_N``."""
    return function_operator(V, sqrt_factor, N, "V_N")


def build_inv_sqrt_n(V: Potential, N: int) -> TrigOperator:
    """``Pi_N (1 + V)^{-1/2} Pi_N``."""
    return function_operator(V, inv_sqrt_factor, N, "A_N")


def build_w_n(V: Potential, N: int) -> TrigOperator:
    """``W_N = V_N (1 - d_xx) V_N`` (symmetric positive definite)."""
    VN = build_v_n(V, N).matrix
    W = VN @ np.diag(sp.h_multiplier(N, 2.0)) @ VN
    return TrigOperator(0.5 * (W + W.T), "W_N")


def build_j_n(V: Potential, N: int, form: str = "direct") -> TrigOperator:
    """Symplectic structure of the perturbed Galerkin flow.

    ``direct``:    V_N^{-1} H^{-2} d_x V_N^{-1}
    ``w_inverse``: W_N^{-1} V_N d_x V_N^{-1}
    """
    VN = build_v_n(V, N).matrix
    VNi = checked_inverse(VN, "V_N")
    dx = sp.dx_matrix(N)
    if form == "direct":
        J = VNi @ np.diag(sp.h_multiplier(N, -2.0)) @ dx @ VNi
    elif form == "w_inverse":
        W = build_w_n(V, N).matrix
        J = checked_inverse(W, "W_N") @ VN @ dx @ VNi
    else:
        raise ValueError(f"unknown J_N form {form!r}")
    return TrigOperator(J, "J_N")


def build_d_n(V: Potential, N: int) -> TrigOperator:
    """``D_N = V_N^{-1} K V_N``; similar to K, so its spectrum is imaginary."""
    VN = build_v_n(V, N).matrix
    return TrigOperator(checked_inverse(VN, "V_N") @ sp.k_matrix(N) @ VN, "D_N")


def apply_d(V: Potential, u: sp.SpectralField, N_ref: int) -> sp.SpectralField:
    """Continuum ``D u = (1+V)^{-1/2} K ((1+V)^{1/2} u)`` realised at order ``N_ref``."""
    x = sp.pad(u.coeffs, N_ref)
    up = function_operator(V, sqrt_factor, N_ref).matrix
    down = function_operator(V, inv_sqrt_factor, N_ref).matrix
    y = sp.apply_k_coeffs(x @ up.T) @ down.T
    return sp.SpectralField(y)


# -- smoothing estimates -----------------------------------------------------------


def _apply_g(g, w: sp.SpectralField) -> sp.SpectralField:
    return w if g is None else g.apply(w)


def bilinear_ratio(g, u: sp.SpectralField, v: sp.SpectralField, s: float):
    """``|K(g(uv))|_{H^s} / (|g| |u|_{L2} |v|_{L2})`` (batched over u, v)."""
    gnorm = 1.0 if g is None else exponential_row_norm(g)
    w = _apply_g(g, sp.multiply(u, v))
    num = sp.sobolev_norm(sp.apply_k(w), s)
    return num / (gnorm * sp.l2_norm(u) * sp.l2_norm(v))


def bilinear_smoothing_check(g, N: int, s: float, count: int = 100, seed: int = 0) -> StatReport:
    """Empirical constant of ``|K(g(uv))|_{H^s} <= C |g| |u| |v|`` over random
    pairs of order ``N`` with flat (white) spectra, the worst case for L2 data."""
    if s >= 0.5:
        raise ValueError("smoothing estimate needs s < 1/2")
    rng = np.random.default_rng(seed)
    u = sp.SpectralField(rng.standard_normal((count, sp.dim(N))))
    v = sp.SpectralField(rng.standard_normal((count, sp.dim(N))))
    ratios = bilinear_ratio(g, u, v, s)
    bound = np.sqrt(np.sum(sp.mode_numbers(4 * N) ** 2 / (1 + sp.mode_numbers(4 * N) ** 2) ** (2 - s)) / (2 * np.pi))
    rep = StatReport("bilinear_smoothing", count=count, seed=seed)
    rep.estimates["ratio"] = ratios
    rep.fits["C_empirical"] = float(np.max(ratios))
    rep.meta.update(N=N, s=s, g=getattr(g, "name", "identity"))
    rep.gate("max ratio below series bound", np.max(ratios), bound)
    return rep


def high_mode_smoothing(g, u: sp.SpectralField, v: sp.SpectralField, s: float, N_list) -> StatReport:
    """``|K(g (1 - Pi_N)(uv))|_{H^s}`` against N with a log-log slope."""
    w = sp.multiply(u, v)
    vals = []
    for N in N_list:
        vals.append(float(sp.sobolev_norm(sp.apply_k(_apply_g(g, sp.tail(w, N))), s)))
    rep = StatReport("high_mode_smoothing")
    rep.estimates["norm"] = np.array(vals)
    rep.estimates["N"] = np.array(N_list, float)
    rep.fits["slope"] = fit_loglog(N_list, vals)[0]
    rep.meta.update(s=s)
    return rep


# -- persistence ---------------------------------------------------------------------

BASIS_LABEL = "c0,c1..cN,s1..sN"


def save_operator(path, op: TrigOperator, V: Potential | None = None) -> None:
    """Text matrix with a ``#`` header carrying N, basis order and V fingerprint."""
    fp = V.fingerprint() if V is not None else op.meta.get("V", "none")
    header = f"name={op.name}\nN={op.N}\nbasis={BASIS_LABEL}\nV={fp}"
    np.savetxt(path, op.matrix, fmt="%.17g", header=header)


def load_operator(path, V: Potential | None = None) -> TrigOperator:
    text = Path(path).read_text()
    head = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        key, _, val = line[1:].strip().partition("=")
        head[key] = val
    if head.get("basis") != BASIS_LABEL:
        raise ValueError(f"unexpected basis convention {head.get('basis')!r}")
    if V is not None and head.get("V") != V.fingerprint():
        raise ValueError("cached operator was built for a different potential")
    m = np.loadtxt(io.StringIO(text), ndmin=2)
    op = TrigOperator(m, head.get("name", ""), {"V": head.get("V")})
    if op.N != int(head["N"]):
        raise ValueError("header order does not match matrix size")
    return op
