"""Norms and ensemble statistics on lattice fields and drift paths."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, PrecisionError, ShapeError
from .flow import DriftPath
from .lattice import Field, grid_of, spectral_energy


@dataclass(frozen=True)
class NormReport:
    kind: str
    parameter: float
    value: float
    mean: float | None = None
    se: float | None = None
    replicas: int | None = None


def ensemble_report(kind: str, parameter: float, values) -> NormReport:
    values = np.asarray(values, dtype=float).ravel()
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return NormReport(kind, float(parameter), mean, mean, se, int(values.size))


def _raw(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def sobolev_norm(f, alpha: float):
    """``(sum_k (1 + |k|^2)^alpha |f_hat(k)|^2)^(1/2)``; batched over leading axes."""
    values = _raw(f)
    grid = grid_of(values)
    out = np.sqrt(spectral_energy(values, (1.0 + grid.abs_k2("half")) ** alpha))
    return float(out) if out.ndim == 0 else out


def _torus_displacements(n: int):
    d = np.arange(n)
    return np.minimum(d, n - d)


def holder_norm(f, s: float, rng=None, exact_limit: int = 64, extra: int = 1024) -> float:
    """``sup |f(x) - f(y)| / d(x, y)^s + sup |f|`` with the torus metric.

    Exact over all displacements up to ``n = exact_limit``.  Above that, all
    displacements with both components at most ``n/4`` plus ``extra`` random
    ones are used.
    """
    if not 0 < s < 1:
        raise DomainError(f"Holder exponent must lie in (0, 1), got {s}")
    values = _raw(f)
    n = grid_of(values).n
    wrap = _torus_displacements(n)
    if n <= exact_limit:
        # d and -d give the same differences
        shifts = [(a, b) for a in range(n // 2 + 1) for b in range(n) if (a, b) != (0, 0)]
    else:
        q = n // 4
        near = [(a, b) for a in range(-q, q + 1) for b in range(-q, q + 1) if (a, b) != (0, 0)]
        rng = np.random.default_rng(rng)
        far = [tuple(x) for x in rng.integers(0, n, size=(extra, 2)) if tuple(x) != (0, 0)]
        shifts = near + far
    eps = 1.0 / n
    best = 0.0
    for a, b in shifts:
        dist = eps * math.hypot(wrap[a % n], wrap[b % n])
        diff = np.max(np.abs(values - np.roll(values, (a, b), axis=(-2, -1))))
        best = max(best, diff / dist**s)
    return best + float(np.max(np.abs(values)))


# Littlewood-Paley blocks


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def lp_cutoff(r):
    """Radial bump: 1 for ``r <= 3/4``, 0 for ``r >= 4/3``, smooth in between."""
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - 0.75) / (4.0 / 3.0 - 0.75))


def lp_top_index(n: int) -> int:
    """Smallest ``J`` whose cutoff ``psi(|k| / 2^J)`` is 1 on the whole dual lattice."""
    return math.ceil(math.log2(math.sqrt(2) * math.pi * n / 0.75))


def lp_partition(n: int, layout: str = "half") -> np.ndarray:
    """Blocks ``chi_{-1}, chi_0, ..., chi_J`` stacked on the first axis.

    ``chi_{-1}(k) = psi(2|k|)`` and ``chi_j(k) = psi(|k|/2^j) - psi(2|k|/2^j)``,
    which telescopes to ``psi(|k|/2^J) = 1`` on the lattice.
    """
    from .lattice import TorusGrid

    r = np.sqrt(TorusGrid(n).abs_k2(layout))
    J = lp_top_index(n)
    blocks = [lp_cutoff(2 * r)]
    for j in range(J + 1):
        blocks.append(lp_cutoff(r / 2.0**j) - lp_cutoff(2 * r / 2.0**j))
    return np.stack(blocks)


@dataclass(frozen=True)
class LPReport:
    blocks: np.ndarray  # ||Delta_j f||_{L2}^2, first entry is the low block
    assembled: np.ndarray
    direct: np.ndarray


def lp_block_norms(f, delta: float) -> LPReport:
    """Block energies and the assembled ``H^{-1+delta}`` estimate.

    ``assembled = sum_j 2^{-2j(1-delta)} ||Delta_j f||^2`` (weight 1 for the low
    block); ``direct = sobolev_norm(f, -1 + delta)**2``.
    """
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    values = _raw(f)
    n = grid_of(values).n
    chi = lp_partition(n)
    blocks = np.stack([spectral_energy(values, c**2) for c in chi], axis=-1)
    J = chi.shape[0] - 2
    weights = np.concatenate([[1.0], 2.0 ** (-2.0 * np.arange(J + 1) * (1 - delta))])
    assembled = blocks @ weights
    direct = sobolev_norm(values, -1 + delta) ** 2
    return LPReport(blocks, assembled, direct)


# drift budgets and lemma checks


def drift_l2_budget(d: DriftPath, s, t):
    return d.l2_budget(s, t)


def integrated_drift_bound_check(d: DriftPath, alpha: float, s, t):
    """``||I_{s,t}(u)||_{H^alpha}^2`` over the lemma's right-hand side.

    ``alpha < 1``: ``(t-s)^(1-alpha) int_s^t ||u||^2``; ``alpha = 1``:
    ``int_s^t ||u||^2``; ``alpha > 1``: ``(t-s)/s^alpha int_s^t ||u||^2``.
    Zero drift gives ratio 0.
    """
    if not 0 <= alpha <= 2:
        raise DomainError(f"alpha must lie in [0, 2], got {alpha}")
    if alpha > 1 and s <= 0:
        raise DomainError("the alpha > 1 bound needs s > 0")
    lhs = sobolev_norm(d.integrated(s, t), alpha) ** 2
    budget = np.asarray(d.l2_budget(s, t))
    if alpha < 1:
        rhs = (t - s) ** (1 - alpha) * budget
    elif alpha == 1:
        rhs = budget
    else:
        rhs = (t - s) / s**alpha * budget
    ratio = np.divide(lhs, rhs, out=np.zeros_like(np.asarray(lhs, dtype=float)), where=rhs > 0)
    return float(ratio) if np.ndim(ratio) == 0 else ratio


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    times: np.ndarray
    budgets: np.ndarray
    degenerate: bool = False


MIN_FIT_ENSEMBLE = 100


def smallscale_scaling_fit(d: DriftPath, delta: float | None = None, decades: float = 2.0) -> ScalingFit:
    """Fit ``log sqrt(E int_0^t ||u||^2)`` against ``log t`` near ``t = 0``.

    ``d`` holds an ensemble on its leading axis.  The fit uses the grid
    points within ``decades`` decades of the smallest one.  ``delta`` is only
    carried for reporting; the expected slope is at least ``delta / 2``.
    """
    fields = d.fields
    if fields.ndim < 4 or fields.shape[0] < MIN_FIT_ENSEMBLE:
        raise PrecisionError(f"need an ensemble of at least {MIN_FIT_ENSEMBLE} drift paths")
    cumulative = np.cumsum(d.step_budgets(), axis=-1).mean(axis=0)
    times = d.scale_grid.nodes[1:]
    keep = times <= times[0] * 10**decades * (1 + 1e-9)
    t, b = times[keep], cumulative[keep]
    if len(t) < 2 or not np.all(b > 0):
        return ScalingFit(math.nan, math.nan, t, b, degenerate=True)
    slope, intercept = np.polyfit(np.log(t), 0.5 * np.log(b), 1)
    return ScalingFit(float(slope), float(intercept), t, b)


def centering(epsilon: float) -> float:
    """``m_eps = (2 log(1/eps) - (3/4) log log(1/eps)) / sqrt(2 pi)``."""
    if not 0 < epsilon < 1 / math.e:
        raise DomainError(f"log log(1/eps) needs eps < 1/e, got {epsilon}")
    L = math.log(1 / epsilon)
    return (2 * L - 0.75 * math.log(L)) / math.sqrt(2 * math.pi)


def max_centered(f):
    values = _raw(f)
    n = grid_of(values).n
    out = values.max(axis=(-2, -1)) - centering(1.0 / n)
    return float(out) if np.ndim(out) == 0 else out


def default_probe_pairs(n: int):
    """A fixed, spread-out set of site pairs, including coincident sites."""
    h, q = n // 2, n // 4
    base = [(0, 0), (q, h), (h, q), (h, h)]
    offsets = [(0, 0), (1, 0), (0, 1), (q, q), (h, 0), (h, h)]
    return [((x, y), ((x + a) % n, (y + b) % n)) for x, y in base for a, b in offsets]


@dataclass(frozen=True)
class IndependenceReport:
    max_abs_correlation: float
    threshold: float
    replicas: int

    @property
    def passed(self) -> bool:
        return self.max_abs_correlation < self.threshold


def independence_check(Y, Phi, probes=None) -> IndependenceReport:
    """Max ``|corr(Y_x, Phi_y)|`` over probe pairs against ``3 / sqrt(R)``."""
    Y, Phi = np.asarray(Y, dtype=float), np.asarray(Phi, dtype=float)
    if Y.shape != Phi.shape or Y.ndim != 3:
        raise ShapeError(f"need paired (R, n, n) ensembles, got {Y.shape} and {Phi.shape}")
    R, n, _ = Y.shape
    probes = probes or default_probe_pairs(n)
    worst = 0.0
    for (x, y) in probes:
        a, b = Y[:, x[0], x[1]], Phi[:, y[0], y[1]]
        if a.std() == 0 or b.std() == 0:
            continue
        worst = max(worst, abs(float(np.corrcoef(a, b)[0, 1])))
    return IndependenceReport(worst, 3.0 / math.sqrt(R), R)


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y).statistic)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
