"""Pauli-Villars scale decomposition of the massive GFF and its samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .lattice import Field, TorusGrid, to_half


@dataclass(frozen=True)
class ScaleParams:
    """Mass ``m > 0`` together with the grid."""

    m: float
    grid: TorusGrid

    def __post_init__(self):
        if not (math.isfinite(self.m) and self.m > 0):
            raise DomainError(f"mass must be positive and finite, got {self.m}")

    def symbol(self, layout: str = "full") -> np.ndarray:
        """``A(k) = -Laplacian_hat(k) + m**2``."""
        return self.grid.neg_laplacian(layout) + self.m**2


def _symbol(p: ScaleParams, k, layout="full"):
    if k is None:
        return p.symbol(layout)
    from .lattice import neg_laplacian_multiplier

    return neg_laplacian_multiplier(p.grid, k) + p.m**2


def _check_t(t, allow_inf=True):
    t = float(t)
    if math.isnan(t) or t <= 0 or (math.isinf(t) and not allow_inf):
        raise DomainError(f"scale must be positive{' or inf' if allow_inf else ''}, got {t}")
    return t


def c_hat(p: ScaleParams, t, k=None, layout: str = "full"):
    """``1/(A(k) + 1/t)``; ``t = inf`` gives the full covariance ``1/A(k)``.

    With ``k=None`` the multiplier is returned on the whole dual lattice.
    """
    t = _check_t(t)
    a = _symbol(p, k, layout)
    return 1.0 / (a + 1.0 / t)


def q_hat(p: ScaleParams, t, k=None, layout: str = "full"):
    """``1/(t A(k) + 1)``, the square root of ``d/dt c_hat``."""
    t = _check_t(t, allow_inf=False)
    return 1.0 / (t * _symbol(p, k, layout) + 1.0)


def cdot_hat(p: ScaleParams, t, k=None, layout: str = "full"):
    return q_hat(p, t, k, layout) ** 2


def c_increment(p: ScaleParams, s, t, layout: str = "full") -> np.ndarray:
    """``c_hat_t - c_hat_s`` for ``0 <= s < t <= inf``, with ``c_hat_0 = 0``."""
    hi = c_hat(p, t, layout=layout)
    if s == 0:
        return hi
    return hi - c_hat(p, s, layout=layout)


def q_integral(p: ScaleParams, s, t, layout: str = "full") -> np.ndarray:
    """``int_s^t q_hat_tau d tau = log((tA+1)/(sA+1)) / A`` for finite ``0 <= s <= t``."""
    a = p.symbol(layout)
    return np.log1p((t - s) * a / (s * a + 1.0)) / a


def diagonal(p: ScaleParams, t=math.inf) -> float:
    """``c_t(x, x) = sum_k c_hat_t(k)``."""
    return float(np.sum(c_hat(p, t)))


def scale_length(p: ScaleParams, t) -> float:
    """``L_t = min(sqrt(t), 1/m)``."""
    if t < 0:
        raise DomainError(f"scale must be nonnegative, got {t}")
    return min(math.sqrt(t), 1.0 / p.m)


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _sqrt_cov_half(p: ScaleParams, cov_mult) -> np.ndarray:
    grid = p.grid
    if callable(cov_mult):
        k1, k2 = grid.frequencies("full")
        cov_mult = cov_mult(k1, k2)
    cov = np.broadcast_to(np.asarray(cov_mult, dtype=float), grid.shape)
    if np.any(cov < 0) or not np.all(np.isfinite(cov)):
        raise DomainError("covariance multiplier must be finite and nonnegative")
    return np.sqrt(to_half(cov))


def sample_with_sqrt(sqrt_half: np.ndarray, rng, size=()) -> np.ndarray:
    """Gaussian fields with ``E|f_hat(k)|**2 = sqrt_half(k)**2``.

    ``white * n`` has unit-variance transform coefficients under the volume
    normalised transform, so colouring it by ``sqrt_half`` gives the target.
    """
    n = sqrt_half.shape[-2]
    size = (size,) if isinstance(size, int) else tuple(size)
    white = rng.standard_normal(size + (n, n))
    return n * np.fft.irfft2(sqrt_half * np.fft.rfft2(white), s=(n, n))


def sample_gaussian(p: ScaleParams, cov_mult, rng, size=()):
    """Centred Gaussian field(s) with spectral variance ``cov_mult(k)``.

    Returns a :class:`Field` when ``size`` is empty, otherwise an array of
    shape ``size + (n, n)``.
    """
    sqrt_half = _sqrt_cov_half(p, cov_mult)
    out = sample_with_sqrt(sqrt_half, _as_rng(rng), size)
    return Field(p.grid, out) if out.ndim == 2 else out


@dataclass(frozen=True)
class ScaleGrid:
    """Increasing scale points ``0 < t_1 < ... < t_N = T_max``."""

    times: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise DomainError("scale grid is empty")
        if times[0] <= 0 or not all(b > a for a, b in zip(times, times[1:])):
            raise DomainError("scale points must be positive and strictly increasing")
        if not math.isfinite(times[-1]):
            raise DomainError("T_max must be finite")
        object.__setattr__(self, "times", times)

    @classmethod
    def dyadic(cls, t_max: float, t_min: float = 2.0**-20, per_octave: int = 1) -> "ScaleGrid":
        """Points ``T_max * 2**(-j/per_octave)`` down to the first one at or below ``t_min``."""
        if per_octave < 1:
            raise DomainError("per_octave must be >= 1")
        steps = math.ceil(per_octave * math.log2(t_max / t_min) - 1e-9)
        j = np.arange(steps, -1, -1)
        return cls(tuple(t_max * 2.0 ** (-j / per_octave)))

    def with_points(self, *points: float) -> "ScaleGrid":
        """Grid with extra scale points inserted (points above ``T_max`` are rejected)."""
        if any(p > self.t_max for p in points):
            raise DomainError("extra points must not exceed T_max")
        merged = sorted(set(self.times) | {float(p) for p in points})
        return ScaleGrid(tuple(merged))

    @property
    def t_max(self) -> float:
        return self.times[-1]

    @property
    def nodes(self) -> np.ndarray:
        """Scale points with ``0`` prepended."""
        return np.concatenate([[0.0], self.times])

    def __len__(self):
        return len(self.times)

    def refine(self) -> "ScaleGrid":
        """Halve every step in log scale, keeping all existing points.

        The first interval ``(0, t_1]`` gets the point ``t_1 / sqrt(r)`` where
        ``r`` is the first ratio, so geometric grids stay geometric.
        """
        t = np.array(self.times)
        mids = np.sqrt(t[:-1] * t[1:])
        ratio = t[1] / t[0] if len(t) > 1 else 2.0
        merged = np.empty(2 * len(t))
        merged[0] = t[0] / math.sqrt(ratio)
        merged[1::2] = t
        merged[2::2] = mids
        return ScaleGrid(tuple(merged))

    def index(self, t: float) -> int:
        """Position of ``t`` in :attr:`nodes`; raises for off-grid times."""
        nodes = self.nodes
        i = int(np.searchsorted(nodes, t))
        for j in (i - 1, i):
            if 0 <= j < len(nodes) and abs(nodes[j] - t) <= 1e-9 * abs(t):
                return j
        raise DomainError(f"time {t} is not a point of the scale grid")


@dataclass
class GffPath:
    """Coupled multiscale GFF along a scale grid.

    ``fields[..., j, :, :]`` is ``Phi_{nodes[j]}``; index 0 is ``t = 0``.
    """

    params: ScaleParams
    scale_grid: ScaleGrid
    fields: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return self.scale_grid.nodes

    def at(self, t) -> np.ndarray:
        return self.fields[..., self.scale_grid.index(t), :, :]

    def small_scales(self, t) -> np.ndarray:
        """``Y_t = Phi_0 - Phi_t``."""
        return self.fields[..., 0, :, :] - self.at(t)

    def increments(self) -> np.ndarray:
        """``Phi_{t_j} - Phi_{t_{j+1}}``; entry ``j`` has covariance ``c_{t_{j+1}} - c_{t_j}``."""
        return self.fields[..., :-1, :, :] - self.fields[..., 1:, :, :]


def increment_sqrts(p: ScaleParams, sg: ScaleGrid) -> list[np.ndarray]:
    """Half-layout square roots of ``c_{t_{j+1}} - c_{t_j}`` per step, plus the top ``c_inf - c_T``."""
    nodes = sg.nodes
    out = [np.sqrt(c_increment(p, nodes[j], nodes[j + 1], "half")) for j in range(len(sg))]
    top = c_hat(p, math.inf, layout="half") - c_hat(p, sg.t_max, layout="half")
    out.append(np.sqrt(np.maximum(top, 0.0)))
    return out


def gff_path(p: ScaleParams, sg: ScaleGrid, rng, replicas: int | None = None) -> GffPath:
    """Sample the multiscale GFF from ``T_max`` down to ``0``.

    ``Phi_{T_max}`` has covariance ``c_inf - c_{T_max}``; each step down adds
    an independent increment, so ``Phi_0`` is a GFF sample.
    """
    rng = _as_rng(rng)
    n = p.grid.n
    size = () if replicas is None else (int(replicas),)
    sqrts = increment_sqrts(p, sg)
    N = len(sg)
    fields = np.empty(size + (N + 1, n, n))
    fields[..., N, :, :] = sample_with_sqrt(sqrts[N], rng, size)
    for j in range(N - 1, -1, -1):
        fields[..., j, :, :] = fields[..., j + 1, :, :] + sample_with_sqrt(sqrts[j], rng, size)
    return GffPath(p, sg, fields)
