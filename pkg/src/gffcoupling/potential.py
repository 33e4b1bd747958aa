"""Wick-ordered exponential potentials and multiplicative chaos masses."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SaturationError
from .lattice import Field, integrate
from .scales import ScaleParams, diagonal

EXPONENT_LIMIT = 700.0


class Model(str, enum.Enum):
    LIOUVILLE = "liouville"
    SINH_GORDON = "sinh-gordon"


class WickConvention(str, enum.Enum):
    EPSILON_POWER = "epsilon-power"
    VARIANCE_SUBTRACTION = "variance-subtraction"


class L2PhaseWarning(UserWarning):
    """beta outside (0, 4 pi), where the uniform estimates are not claimed."""


@dataclass(frozen=True)
class ModelParams:
    model: Model
    beta: float
    scale: ScaleParams
    lam: float = 1.0
    wick: WickConvention = WickConvention.EPSILON_POWER

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "wick", WickConvention(self.wick))
        if not (0 < self.beta < 8 * math.pi):
            raise DomainError(f"beta must lie in (0, 8 pi), got {self.beta}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if self.beta >= 4 * math.pi:
            warnings.warn(f"beta = {self.beta:.4g} is outside the L2 phase", L2PhaseWarning, stacklevel=3)

    @property
    def grid(self):
        return self.scale.grid

    @property
    def m(self) -> float:
        return self.scale.m

    @property
    def sqrt_beta(self) -> float:
        return math.sqrt(self.beta)

    @property
    def l2_phase(self) -> bool:
        return self.beta < 4 * math.pi


def log_wick_factor(mp: ModelParams, conv: WickConvention | None = None) -> float:
    """Log of the constant Wick prefactor."""
    conv = WickConvention(conv or mp.wick)
    if conv is WickConvention.EPSILON_POWER:
        return mp.beta / (4 * math.pi) * math.log(mp.grid.epsilon)
    return -0.5 * mp.beta * diagonal(mp.scale)


def convert_wick(value, mp: ModelParams, source, target):
    """Rescale a Wick-ordered quantity from one convention to another."""
    return value * math.exp(log_wick_factor(mp, target) - log_wick_factor(mp, source))


def _exp_guarded(exponent: np.ndarray) -> np.ndarray:
    big = np.max(exponent) if exponent.size else 0.0
    if not big <= EXPONENT_LIMIT:
        flat = int(np.nanargmax(exponent)) if not math.isnan(big) else int(np.argmax(np.isnan(exponent)))
        site = np.unravel_index(flat, exponent.shape)
        raise SaturationError(
            f"Wick exponent {exponent[site]:.4g} exceeds {EXPONENT_LIMIT} at index {site}",
            site=site,
            exponent=float(exponent[site]),
        )
    return np.exp(exponent)


def _raw(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def wick_exp(f, sign: int, mp: ModelParams, conv=None):
    """``:exp(sign sqrt(beta) f):`` pointwise, in the chosen convention."""
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    values = _raw(f)
    out = _exp_guarded(sign * mp.sqrt_beta * values + log_wick_factor(mp, conv))
    return Field(mp.grid, out) if isinstance(f, Field) else out


def _wick_pair(values, mp, conv):
    log_w = log_wick_factor(mp, conv)
    sb = mp.sqrt_beta
    plus = _exp_guarded(sb * values + log_w)
    if mp.model is Model.LIOUVILLE:
        return plus, None
    return plus, _exp_guarded(-sb * values + log_w)


def v0_and_grad(values: np.ndarray, mp: ModelParams, conv=None):
    """Bare potential and its gradient for batched fields (one pass of exponentials)."""
    plus, minus = _wick_pair(values, mp, conv)
    if minus is None:
        density, grad = plus, plus
    else:
        density, grad = 0.5 * (plus + minus), 0.5 * (plus - minus)
    return mp.lam * integrate(density), (mp.lam * mp.sqrt_beta) * grad


def v0(f, mp: ModelParams, conv=None):
    """``lam * int :V(f):``, with ``V = exp`` or ``cosh``."""
    plus, minus = _wick_pair(_raw(f), mp, conv)
    density = plus if minus is None else 0.5 * (plus + minus)
    out = mp.lam * integrate(density)
    return float(out) if np.ndim(out) == 0 else out


def grad_v0(f, mp: ModelParams, conv=None):
    """Gradient for the normalised inner product ``int f g dx``."""
    _, grad = v0_and_grad(_raw(f), mp, conv)
    return Field(mp.grid, grad) if isinstance(f, Field) else grad


def gmc_mass(f, mp: ModelParams, sign: int = 1):
    """``int exp(sign sqrt(beta) f - beta c_inf(x,x) / 2) dx``."""
    out = integrate(wick_exp(_raw(f), sign, mp, WickConvention.VARIANCE_SUBTRACTION))
    return float(out) if np.ndim(out) == 0 else out


def gmc_mass_sym(f, mp: ModelParams):
    return 0.5 * (gmc_mass(f, mp, 1) + gmc_mass(f, mp, -1))
