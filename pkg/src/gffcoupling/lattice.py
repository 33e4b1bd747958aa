"""Discrete unit torus, its Fourier calculus and the five-point Laplacian.

Conventions
-----------
Sites are ``x = eps * (i, j)`` with ``eps = 1/n``.  Dual frequencies are
``k = 2*pi*(a, b)`` with ``-n/2 <= a, b < n/2``.  The transform carries the
volume factor::

    f_hat(k) = eps**2 * sum_x f(x) exp(-i k.x)
    f(x)     = sum_k f_hat(k) exp(i k.x)

so that ``eps**2 * sum |f|**2 == sum |f_hat|**2``.

Arrays in "full" layout are indexed like ``numpy.fft.fft2`` output; "half"
layout is the ``rfft2`` layout.  Every multiplier used internally is real and
even in k, which is what makes the half layout sufficient.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidFieldError, SymmetryError

_HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class TorusGrid:
    """Square torus of side 1 with ``n`` sites per axis (``n`` a power of two)."""

    n: int

    def __post_init__(self):
        n = self.n
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise DomainError(f"grid size must be an integer, got {n!r}")
        if n < 2 or n & (n - 1):
            raise DomainError(f"grid size must be a power of two >= 2, got {n}")
        object.__setattr__(self, "n", int(n))

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def size(self) -> int:
        return self.n * self.n

    def frequencies(self, layout: str = "full"):
        """Dual frequencies ``(k1, k2)`` broadcast to the given layout."""
        return _frequencies(self.n, layout)

    def neg_laplacian(self, layout: str = "full") -> np.ndarray:
        """Multiplier of the five-point ``-Laplacian`` on the whole dual lattice."""
        return _neg_laplacian(self.n, layout)

    def abs_k2(self, layout: str = "full") -> np.ndarray:
        """``|k|**2`` on the whole dual lattice."""
        return _abs_k2(self.n, layout)

    def sites(self):
        """Site coordinates ``(x1, x2)``, each of shape ``(n, n)``."""
        x = np.arange(self.n) * self.epsilon
        return np.meshgrid(x, x, indexing="ij")


@functools.lru_cache(maxsize=None)
def _frequencies(n: int, layout: str):
    k1 = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    if layout == "full":
        k2 = k1
    elif layout == "half":
        # rfft column n/2 is the Nyquist mode; as a dual point it is -pi/eps
        k2 = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n)[: n // 2 + 1]
        k2 = np.abs(k2)
        k2[-1] = -k2[-1]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    a, b = np.meshgrid(k1, k2, indexing="ij")
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


@functools.lru_cache(maxsize=None)
def _neg_laplacian(n: int, layout: str) -> np.ndarray:
    k1, k2 = _frequencies(n, layout)
    eps = 1.0 / n
    out = (4.0 / eps**2) * (np.sin(eps * k1 / 2) ** 2 + np.sin(eps * k2 / 2) ** 2)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=None)
def _abs_k2(n: int, layout: str) -> np.ndarray:
    k1, k2 = _frequencies(n, layout)
    out = k1**2 + k2**2
    out.setflags(write=False)
    return out


def grid_of(values) -> TorusGrid:
    """Grid matching the trailing two axes of an array."""
    values = np.asarray(values)
    if values.ndim < 2 or values.shape[-1] != values.shape[-2]:
        raise InvalidFieldError(f"expected trailing (n, n) axes, got shape {values.shape}")
    return TorusGrid(values.shape[-1])


@dataclass(frozen=True)
class Field:
    """Real field on a torus grid; ``values[i, j]`` lives at ``eps * (i, j)``."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise InvalidFieldError(
                f"field shape {values.shape} does not match grid {self.grid.shape}"
            )
        _check_finite(values)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values) -> "Field":
        return cls(grid_of(values), values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a field, ``coefficients`` in full FFT layout."""

    grid: TorusGrid
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != self.grid.shape:
            raise InvalidFieldError(
                f"coefficient shape {c.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "coefficients", c)

    def is_hermitian(self, tol: float = _HERMITIAN_TOL) -> bool:
        c = self.coefficients
        mirrored = np.conj(np.roll(c[::-1, ::-1], 1, axis=(0, 1)))
        scale = max(float(np.max(np.abs(c))), 1.0)
        return bool(np.max(np.abs(c - mirrored)) <= tol * scale)


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise InvalidFieldError("field contains non-finite values")


def _values(f) -> np.ndarray:
    if isinstance(f, Field):
        return f.values
    return np.asarray(f, dtype=float)


def integrate(f) -> float | np.ndarray:
    """Discrete integral ``eps**2 * sum_x f(x)`` over the trailing two axes."""
    values = _values(f)
    _check_finite(values)
    n = values.shape[-1]
    return values.sum(axis=(-2, -1)) / (n * n)


def forward_transform(f) -> SpectralField:
    values = _values(f)
    grid = grid_of(values)
    _check_finite(values)
    return SpectralField(grid, np.fft.fft2(values) / grid.size)


def inverse_transform(F: SpectralField) -> Field:
    if not F.is_hermitian():
        raise SymmetryError("coefficients are not Hermitian; they do not describe a real field")
    values = np.fft.ifft2(F.coefficients).real * F.grid.size
    return Field(F.grid, values)


def _on_dual_lattice(grid: TorusGrid, k) -> tuple[np.ndarray, np.ndarray]:
    k1, k2 = (np.asarray(c, dtype=float) for c in k)
    n = grid.n
    for comp in (k1, k2):
        a = comp / (2 * np.pi)
        idx = np.rint(a)
        if np.any(np.abs(a - idx) > 1e-9) or np.any(idx < -n // 2) or np.any(idx >= n // 2):
            raise DomainError(f"frequency {k} is not on the dual lattice of n={n}")
    return k1, k2


def neg_laplacian_multiplier(grid: TorusGrid, k):
    """``(4/eps**2) * (sin(eps*k1/2)**2 + sin(eps*k2/2)**2)`` for ``k`` on the dual lattice."""
    k1, k2 = _on_dual_lattice(grid, k)
    eps = grid.epsilon
    out = (4.0 / eps**2) * (np.sin(eps * k1 / 2) ** 2 + np.sin(eps * k2 / 2) ** 2)
    return float(out) if out.ndim == 0 else out


def _full_multiplier(grid: TorusGrid, mult) -> np.ndarray:
    if callable(mult):
        k1, k2 = grid.frequencies("full")
        mult = mult(k1, k2)
    mult = np.broadcast_to(np.asarray(mult), grid.shape)
    if not np.all(np.isfinite(mult)):
        raise DomainError("multiplier is not finite on the dual lattice")
    return mult


def apply_spectral(mult, f) -> Field:
    """Apply a Fourier multiplier: ``inverse_transform(mult(k) * f_hat(k))``.

    ``mult`` is a callable ``mult(k1, k2)`` on arrays of dual frequencies, or
    an array in full layout.
    """
    F = forward_transform(f)
    m = _full_multiplier(F.grid, mult)
    return inverse_transform(SpectralField(F.grid, m * F.coefficients))


def apply_even(mult_half: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Fast path for a real even multiplier given in half layout.

    Works on any leading batch shape.
    """
    n = values.shape[-1]
    return np.fft.irfft2(mult_half * np.fft.rfft2(values), s=(n, n))


def to_half(mult_full: np.ndarray) -> np.ndarray:
    """Restrict a full-layout multiplier to the rfft layout."""
    n = mult_full.shape[-1]
    return mult_full[..., : n // 2 + 1]


def spectral_energy(values: np.ndarray, weight_half: np.ndarray | None = None) -> np.ndarray:
    """``sum_k w(k) |f_hat(k)|**2`` over the trailing axes, ``w`` real and even.

    Uses the half spectrum with the usual doubling of the interior columns.
    """
    n = values.shape[-1]
    power = np.abs(np.fft.rfft2(values)) ** 2 / float(n) ** 4
    if weight_half is not None:
        power = power * weight_half
    power[..., 1 : (n + 1) // 2] *= 2.0
    return power.sum(axis=(-2, -1))


# serialisation

_HEADER = struct.Struct("<dd")


def field_to_bytes(f) -> bytes:
    values = _values(f)
    grid = grid_of(values)
    return _HEADER.pack(float(grid.n), grid.epsilon) + np.ascontiguousarray(
        values, dtype="<f8"
    ).tobytes()


def field_from_bytes(data: bytes, offset: int = 0) -> tuple[Field, int]:
    """Decode one field record; returns the field and the offset after it."""
    n_f, eps = _HEADER.unpack_from(data, offset)
    n = int(n_f)
    if n != n_f or abs(eps * n - 1.0) > 1e-12:
        raise InvalidFieldError(f"corrupt field header n={n_f}, eps={eps}")
    start = offset + _HEADER.size
    stop = start + 8 * n * n
    if stop > len(data):
        raise InvalidFieldError("truncated field record")
    values = np.frombuffer(data[start:stop], dtype="<f8").reshape(n, n).astype(float)
    return Field(TorusGrid(n), values), stop


def write_field(path, f) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def read_field(path) -> Field:
    field, _ = field_from_bytes(Path(path).read_bytes())
    return field


def write_field_csv(path, f) -> None:
    np.savetxt(path, _values(f), delimiter=",", fmt="%.17g")


def read_field_csv(path) -> Field:
    return Field.from_array(np.loadtxt(path, delimiter=",", ndmin=2))
