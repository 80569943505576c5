"""Real trigonometric polynomials on the periodic interval [0, 2*pi).

Fields are stored by their coefficients in the orthonormal basis

    c_0 = 1/sqrt(2 pi),  c_n = cos(n x)/sqrt(pi),  s_n = sin(n x)/sqrt(pi)

laid out as ``(c_0, c_1, ..., c_N, s_1, ..., s_N)``.  Every array-level helper
accepts arbitrary leading batch dimensions, so an ensemble of fields is simply a
``SpectralField`` whose coefficient array has shape ``(count, 2N+1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SQRT_PI = np.sqrt(np.pi)
SQRT_2PI = np.sqrt(2.0 * np.pi)


def dim(N: int) -> int:
    return 2 * N + 1


def order_of(size: int) -> int:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"coefficient vector length must be odd, got {size}")
    return (size - 1) // 2


def mode_numbers(N: int) -> np.ndarray:
    """Wavenumber of each basis slot: ``[0, 1..N, 1..N]``."""
    n = np.arange(1, N + 1)
    return np.concatenate([[0], n, n]).astype(float)


def h_multiplier(N: int, s: float) -> np.ndarray:
    """Diagonal of ``H^s = (1 - d_xx)^(s/2)`` in basis order."""
    return (1.0 + mode_numbers(N) ** 2) ** (s / 2.0)


def dispersion(N: int) -> np.ndarray:
    """``omega_n = n / (1 + n^2)`` for n = 0..N."""
    n = np.arange(N + 1, dtype=float)
    return n / (1.0 + n**2)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A (possibly batched) real trigonometric polynomial of order ``N``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        order_of(c.shape[-1])
        if not np.all(np.isfinite(c)):
            raise ValueError("SpectralField coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_ab(cls, a, b) -> "SpectralField":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape[-1] != b.shape[-1] + 1:
            raise ValueError("need len(a) == len(b) + 1 (there is no b_0)")
        return cls(np.concatenate([a, b], axis=-1))

    @classmethod
    def zeros(cls, N: int, batch: tuple = ()) -> "SpectralField":
        return cls(np.zeros(tuple(batch) + (dim(N),)))

    @property
    def N(self) -> int:
        return order_of(self.coeffs.shape[-1])

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    @property
    def a(self) -> np.ndarray:
        return self.coeffs[..., : self.N + 1]

    @property
    def b(self) -> np.ndarray:
        return self.coeffs[..., self.N + 1 :]

    def __getitem__(self, idx) -> "SpectralField":
        if not self.batch_shape:
            raise TypeError("cannot index an unbatched field")
        return SpectralField(self.coeffs[idx])

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("unbatched field has no length")
        return self.batch_shape[0]

    def _aligned(self, other: "SpectralField"):
        N = max(self.N, other.N)
        return pad(self.coeffs, N), pad(other.coeffs, N)

    def __add__(self, other):
        x, y = self._aligned(other)
        return SpectralField(x + y)

    def __sub__(self, other):
        x, y = self._aligned(other)
        return SpectralField(x - y)

    def __neg__(self):
        return SpectralField(-self.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.coeffs / scalar)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def __repr__(self) -> str:
        return f"SpectralField(N={self.N}, batch={self.batch_shape})"


def constant_mode(N: int = 0) -> SpectralField:
    c = np.zeros(dim(N))
    c[0] = 1.0
    return SpectralField(c)


def cos_mode(n: int, N: int | None = None) -> SpectralField:
    N = n if N is None else N
    if not 0 <= n <= N:
        raise ValueError("need 0 <= n <= N")
    c = np.zeros(dim(N))
    c[n] = 1.0
    return SpectralField(c)


def sin_mode(n: int, N: int | None = None) -> SpectralField:
    N = n if N is None else N
    if not 1 <= n <= N:
        raise ValueError("need 1 <= n <= N")
    c = np.zeros(dim(N))
    c[N + n] = 1.0
    return SpectralField(c)


# -- coefficient-array helpers ---------------------------------------------


def pad(coeffs: np.ndarray, N: int) -> np.ndarray:
    """Zero-pad or truncate a coefficient array to order ``N``."""
    coeffs = np.asarray(coeffs, dtype=float)
    N0 = order_of(coeffs.shape[-1])
    if N0 == N:
        return coeffs
    out = np.zeros(coeffs.shape[:-1] + (dim(N),))
    m = min(N0, N)
    out[..., : m + 1] = coeffs[..., : m + 1]
    out[..., N + 1 : N + 1 + m] = coeffs[..., N0 + 1 : N0 + 1 + m]
    return out


def to_complex(coeffs: np.ndarray) -> np.ndarray:
    """Coefficients ``u_hat[k]`` for k = 0..N with ``u = sum_k u_hat[k] e^{ikx}``
    (negative k are the complex conjugates)."""
    N = order_of(coeffs.shape[-1])
    out = np.empty(coeffs.shape[:-1] + (N + 1,), dtype=complex)
    out[..., 0] = coeffs[..., 0] / SQRT_2PI
    out[..., 1:] = (coeffs[..., 1 : N + 1] - 1j * coeffs[..., N + 1 :]) / (2 * SQRT_PI)
    return out


def from_complex(uhat: np.ndarray, N: int) -> np.ndarray:
    """Inverse of :func:`to_complex`, truncated or padded to order ``N``."""
    K = uhat.shape[-1] - 1
    m = min(K, N)
    out = np.zeros(uhat.shape[:-1] + (dim(N),))
    out[..., 0] = SQRT_2PI * uhat[..., 0].real
    out[..., 1 : m + 1] = 2 * SQRT_PI * uhat[..., 1 : m + 1].real
    out[..., N + 1 : N + 1 + m] = -2 * SQRT_PI * uhat[..., 1 : m + 1].imag
    return out


def grid_size(N: int) -> int:
    """Smallest even grid on which an order-N polynomial is represented exactly."""
    return 2 * N + 2


def to_grid_values(coeffs: np.ndarray, M: int) -> np.ndarray:
    N = order_of(coeffs.shape[-1])
    if M < 2 * N + 1:
        raise ValueError(f"grid of {M} points cannot hold order {N}")
    X = np.zeros(coeffs.shape[:-1] + (M // 2 + 1,), dtype=complex)
    X[..., : N + 1] = M * to_complex(coeffs)
    if M % 2 == 0 and N == M // 2:
        raise ValueError("Nyquist mode is not representable")
    return np.fft.irfft(X, n=M, axis=-1)


def from_grid_values(values: np.ndarray, N: int) -> np.ndarray:
    """Project grid samples onto order ``N`` (exact if the samples are a
    trigonometric polynomial of order < M/2)."""
    M = values.shape[-1]
    uhat = np.fft.rfft(values, axis=-1) / M
    if N >= (M + 1) // 2:
        raise ValueError(f"grid of {M} points resolves order < {(M + 1) // 2}")
    return from_complex(uhat[..., : N + 1], N)


def product_coeffs(x: np.ndarray, y: np.ndarray, N_out: int | None = None) -> np.ndarray:
    """Coefficients of ``Pi_{N_out}(u v)``, computed without aliasing.

    The grid holds ``N_u + N_v + N_out + 1`` points at least, which makes every
    retained coefficient exact.  ``N_out`` defaults to the full product order.
    """
    Nu, Nv = order_of(x.shape[-1]), order_of(y.shape[-1])
    full = Nu + Nv
    N_out = full if N_out is None else N_out
    M = max(Nu + Nv + min(N_out, full) + 1, grid_size(max(Nu, Nv, N_out)))
    M += M % 2
    p = to_grid_values(x, M) * to_grid_values(y, M)
    return from_grid_values(p, N_out)


def square_coeffs(x: np.ndarray, N_out: int | None = None) -> np.ndarray:
    return product_coeffs(x, x, N_out)


@lru_cache(maxsize=None)
def square_matrices(N: int):
    """Synthesis ``E`` (dim x M) and projection ``P`` (M x dim) such that
    ``Pi_N(u^2) = ((x @ E) ** 2) @ P`` exactly for order-N coefficients ``x``.

    The grid has ``M >= 3N + 1`` points, enough that aliases of the order-2N
    square never reach modes <= N.  For large batches two dense products beat
    the FFT round trip.
    """
    M = 3 * N + 1
    M += M % 2
    I = np.eye(dim(N))
    E = to_grid_values(I, M)
    P = from_grid_values(np.eye(M), N)
    E.setflags(write=False)
    P.setflags(write=False)
    return E, P


def apply_k_coeffs(coeffs: np.ndarray) -> np.ndarray:
    N = order_of(coeffs.shape[-1])
    w = dispersion(N)[1:]
    out = np.zeros_like(coeffs, dtype=float)
    out[..., 1 : N + 1] = w * coeffs[..., N + 1 :]
    out[..., N + 1 :] = -w * coeffs[..., 1 : N + 1]
    return out


def k_matrix(N: int) -> np.ndarray:
    """Matrix of ``K = (1 - d_xx)^{-1} d_x`` on E_0^N (antisymmetric)."""
    K = np.zeros((dim(N), dim(N)))
    w = dispersion(N)[1:]
    idx = np.arange(1, N + 1)
    K[idx, N + idx] = w
    K[N + idx, idx] = -w
    return K


def dx_matrix(N: int) -> np.ndarray:
    """Matrix of ``d_x`` on E_0^N: d_x c_n = -n s_n, d_x s_n = n c_n."""
    D = np.zeros((dim(N), dim(N)))
    idx = np.arange(1, N + 1)
    D[idx, N + idx] = idx
    D[N + idx, idx] = -idx
    return D


# -- field-level operations -------------------------------------------------


def project(u: SpectralField, N: int) -> SpectralField:
    if N < 0:
        raise ValueError("truncation order must be nonnegative")
    return SpectralField(pad(u.coeffs, N))


def tail(u: SpectralField, N: int) -> SpectralField:
    """``(1 - Pi_N) u`` kept at the order of ``u``."""
    c = np.array(u.coeffs)
    n = mode_numbers(u.N)
    c[..., n <= N] = 0.0
    return SpectralField(c)


def h_power(u: SpectralField, s: float) -> SpectralField:
    return SpectralField(u.coeffs * h_multiplier(u.N, s))


def apply_k(u: SpectralField) -> SpectralField:
    return SpectralField(apply_k_coeffs(u.coeffs))


def multiply(u: SpectralField, v: SpectralField) -> SpectralField:
    """Exact product ``u v`` as a field of order ``u.N + v.N``."""
    return SpectralField(product_coeffs(u.coeffs, v.coeffs))


def inner(u: SpectralField, v: SpectralField):
    x, y = u._aligned(v)
    return np.sum(x * y, axis=-1)


def l2_norm(u: SpectralField):
    return np.sqrt(np.sum(u.coeffs**2, axis=-1))


def sobolev_norm(u: SpectralField, s: float):
    return l2_norm(h_power(u, s))


def h_minus1_seminorm(u: SpectralField, convention: str = "orthonormal"):
    """H^{-1} size of ``u``.

    ``orthonormal``: (sum (a_n^2 + b_n^2) / (1 + n^2))^(1/2), the convention under
    which the Gibbs measure has characteristic functional exp(-|lambda|^2 / 2).
    ``two_pi_scaled``: the same sum with an extra 1/(2 pi) factor on every term.
    """
    sq = np.sum(u.coeffs**2 / (1.0 + mode_numbers(u.N) ** 2), axis=-1)
    if convention == "orthonormal":
        return np.sqrt(sq)
    if convention == "two_pi_scaled":
        return np.sqrt(sq / (2 * np.pi))
    raise ValueError(f"unknown H^-1 convention {convention!r}")


def evaluate(u: SpectralField, x) -> np.ndarray:
    """Pointwise values at arbitrary points ``x`` (broadcast over the batch)."""
    x = np.asarray(x, dtype=float)
    N = u.N
    n = np.arange(1, N + 1)
    cos = np.cos(np.multiply.outer(x, n)) / SQRT_PI
    sin = np.sin(np.multiply.outer(x, n)) / SQRT_PI
    a, b = u.a, u.b
    return (
        a[..., :1] / SQRT_2PI
        + np.einsum("...n,xn->...x", a[..., 1:], cos)
        + np.einsum("...n,xn->...x", b, sin)
    )


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples on the uniform grid ``x_j = 2 pi j / M``."""

    samples: np.ndarray

    @property
    def M(self) -> int:
        return self.samples.shape[-1]

    @property
    def x(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    def integral(self):
        """Rectangle rule; exact for trigonometric polynomials of order < M."""
        return 2 * np.pi * np.mean(self.samples, axis=-1)

    def to_field(self, N: int) -> SpectralField:
        return SpectralField(from_grid_values(self.samples, N))


def to_grid(u: SpectralField, M: int | None = None) -> GridFunction:
    M = grid_size(u.N) if M is None else M
    return GridFunction(to_grid_values(u.coeffs, M))


def integrate_power(u: SpectralField, p: int):
    """Exact ``int_0^{2pi} u^p dx`` for a positive integer ``p``."""
    if p < 1:
        raise ValueError("power must be a positive integer")
    M = p * u.N + 1
    M += M % 2
    g = to_grid(u, max(M, grid_size(u.N)))
    return GridFunction(g.samples**p).integral()
