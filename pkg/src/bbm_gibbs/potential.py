"""The small periodic potential V perturbing the Gibbs measure and the flow."""
from __future__ import annotations

import ast
import hashlib
import operator
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import spectral as sp

DEFAULT_GRID = 4096
SMALLNESS_BOUND = 0.5


class InadmissiblePotential(ValueError):
    """Raised when ||V||_inf = sup|V| + sup|V'| + sup|V''| exceeds 1/2."""


def _spectral_derivative(values: np.ndarray, order: int) -> np.ndarray:
    M = values.shape[-1]
    k = np.fft.rfftfreq(M, d=1.0 / M)
    vhat = np.fft.rfft(values)
    if M % 2 == 0:
        vhat[-1] = 0.0 if order % 2 else vhat[-1]
    return np.fft.irfft((1j * k) ** order * vhat, n=M)


@dataclass(frozen=True, eq=False)
class Potential:
    """V sampled on a uniform grid, with its norms and Fourier data.

    The grid samples define V as the band-limited interpolant, so any other grid
    can be reached by zero-padding the spectrum.
    """

    samples: np.ndarray
    label: str = "V"

    def __post_init__(self):
        v = np.array(self.samples, dtype=float)
        if v.ndim != 1 or v.size < 8:
            raise ValueError("potential needs a 1-D array of at least 8 samples")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "samples", v)
        if self.norm_inf > SMALLNESS_BOUND + 1e-12:
            raise InadmissiblePotential(
                f"||V||_inf = {self.norm_inf:.6g} exceeds {SMALLNESS_BOUND} for {self.label}"
            )

    # constructors

    @classmethod
    def zero(cls, M: int = DEFAULT_GRID) -> "Potential":
        return cls(np.zeros(M), label="0")

    @classmethod
    def from_function(cls, f, M: int = DEFAULT_GRID, label: str = "V") -> "Potential":
        x = 2 * np.pi * np.arange(M) / M
        return cls(np.broadcast_to(np.asarray(f(x), dtype=float), (M,)), label=label)

    @classmethod
    def cosine(cls, eps: float, k: int = 1, M: int = DEFAULT_GRID) -> "Potential":
        return cls.from_function(lambda x: eps * np.cos(k * x), M, label=f"{eps!r}*cos({k}*x)")

    @classmethod
    def parse(cls, expr: str, M: int = DEFAULT_GRID) -> "Potential":
        """Build V from an expression such as ``"1/20*cos(x) + 0.01*sin(3*x)"``."""
        tree = ast.parse(expr, mode="eval")
        x = 2 * np.pi * np.arange(M) / M
        return cls(np.broadcast_to(_eval_expr(tree.body, x), (M,)), label=expr)

    @classmethod
    def from_file(cls, path) -> "Potential":
        """Grid samples, one per line (or a ``.npy`` array), on x_j = 2 pi j / M."""
        path = Path(path)
        if path.suffix == ".npy":
            values = np.load(path)
        else:
            values = np.loadtxt(path, ndmin=1)
        return cls(values, label=str(path))

    def scaled(self, factor: float) -> "Potential":
        return Potential(factor * self.samples, label=f"{factor!r}*({self.label})")

    # derived data

    @property
    def M(self) -> int:
        return self.samples.size

    @property
    def norms(self) -> tuple[float, float, float]:
        v = self.samples
        return (
            float(np.max(np.abs(v))),
            float(np.max(np.abs(_spectral_derivative(v, 1)))),
            float(np.max(np.abs(_spectral_derivative(v, 2)))),
        )

    @property
    def norm_inf(self) -> float:
        return float(sum(self.norms))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.samples)

    def resample(self, M: int) -> np.ndarray:
        """Band-limited interpolation of V onto ``M`` points."""
        if M == self.M:
            return np.array(self.samples)
        vhat = np.fft.rfft(self.samples) / self.M
        out = np.zeros(M // 2 + 1, dtype=complex)
        m = min(vhat.size, out.size)
        out[:m] = vhat[:m]
        return np.fft.irfft(out * M, n=M)

    def function_coeffs(self, f, kmax: int, M: int | None = None):
        """Complex Fourier coefficients ``g_k``, 0 <= k <= kmax, of ``g = f(V)``,
        plus the l1 mass of the discarded coefficients (k > kmax).

        ``g`` is evaluated pointwise on an oversampled grid and transformed.
        """
        M = max(DEFAULT_GRID, 16 * kmax, self.M) if M is None else M
        g = f(self.resample(M))
        ghat = np.fft.rfft(g) / M
        kept = ghat[: kmax + 1]
        if kept.size < kmax + 1:
            kept = np.concatenate([kept, np.zeros(kmax + 1 - kept.size, complex)])
        dropped = 2 * float(np.sum(np.abs(ghat[kmax + 1 :])))
        return kept, dropped

    def field(self, N: int) -> sp.SpectralField:
        """V itself as an order-N field."""
        return sp.SpectralField(sp.from_grid_values(self.resample(max(self.M, 2 * N + 2)), N))

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()[:16]

    def __repr__(self) -> str:
        return f"Potential({self.label!r}, ||V||_inf={self.norm_inf:.4g})"


@dataclass(frozen=True, eq=False)
class Profile:
    """An unscaled shape V0 (not necessarily admissible) generating the family eps * V0."""

    samples: np.ndarray
    label: str = "V0"

    def __post_init__(self):
        v = np.array(self.samples, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "samples", v)

    @classmethod
    def parse(cls, expr: str, M: int = DEFAULT_GRID) -> "Profile":
        x = 2 * np.pi * np.arange(M) / M
        return cls(np.broadcast_to(_eval_expr(ast.parse(expr, mode="eval").body, x), (M,)), label=expr)

    @classmethod
    def cosine(cls, k: int = 1, M: int = DEFAULT_GRID) -> "Profile":
        return cls.parse(f"cos({k}*x)", M)

    @property
    def norm_inf(self) -> float:
        v = self.samples
        return float(sum(np.max(np.abs(_spectral_derivative(v, d) if d else v)) for d in range(3)))

    @property
    def max_eps(self) -> float:
        """Largest scale keeping eps * V0 admissible."""
        return SMALLNESS_BOUND / self.norm_inf if self.norm_inf else np.inf

    def at(self, eps: float) -> Potential:
        if eps == 0:
            return Potential(np.zeros_like(self.samples), label="0")
        return Potential(eps * self.samples, label=f"{eps!r}*({self.label})")


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"cos": np.cos, "sin": np.sin}


def _eval_expr(node, x):
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_expr(node.left, x), _eval_expr(node.right, x))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_expr(node.operand, x)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(Fraction(str(node.value)))
    if isinstance(node, ast.Name):
        if node.id == "x":
            return x
        if node.id == "pi":
            return np.pi
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        return _FUNCS[node.func.id](_eval_expr(node.args[0], x))
    raise ValueError(f"unsupported element in potential expression: {ast.dump(node)}")
