"""Monte Carlo estimates of the renormalised potential ``v_t`` and its gradient.

``exp(-v_t(phi)) = E[exp(-v0(phi + zeta))]`` with ``zeta ~ N(0, c_t)``.  The
gradient is the self-normalised ratio ``E[grad v0 e^{-v0}] / E[e^{-v0}]``,
estimated from one shared set of full-field draws for all sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError
from .lattice import Field, integrate, to_half
from .potential import Model, ModelParams, v0, v0_and_grad
from .scales import _as_rng, c_hat, sample_with_sqrt, scale_length

RELIABLE_ESS_FRACTION = 0.1


@dataclass
class RenormEstimate:
    """A value (scalar or field, possibly batched) with its sampling diagnostics."""

    value: np.ndarray | float
    n_samples: int
    ess: np.ndarray | float
    std_error: np.ndarray | float

    @property
    def reliable(self):
        return np.asarray(self.ess) >= RELIABLE_ESS_FRACTION * self.n_samples


def small_scale_sqrt(mp: ModelParams, t) -> np.ndarray:
    return np.sqrt(to_half(c_hat(mp.scale, t)))


def draw_small_scales(mp: ModelParams, t, n_samples: int, rng, batch_shape=()) -> np.ndarray:
    """``zeta ~ N(0, c_t)`` of shape ``batch_shape + (n_samples, n, n)``."""
    return sample_with_sqrt(small_scale_sqrt(mp, t), _as_rng(rng), tuple(batch_shape) + (n_samples,))


def _raw(phi):
    return phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)


def _log_weights(values, zeta, mp):
    return -v0(values[..., None, :, :] + zeta, mp)


def _check_weights(logw):
    if not np.all(np.any(np.isfinite(logw), axis=-1)):
        raise DegenerateWeightsError("all importance weights vanished")


def vt_estimate(phi, t, mp: ModelParams, n_samples: int = 4096, rng=None, zeta=None) -> RenormEstimate:
    """``-log mean_i exp(-v0(phi + zeta_i))`` via log-sum-exp.

    ``phi`` may carry leading batch axes; each batch entry gets its own draws
    unless ``zeta`` (shape ``batch + (N, n, n)``) is supplied.
    """
    values = _raw(phi)
    if t == 0:
        out = v0(values, mp)
        return RenormEstimate(out, 1, _scalar(np.ones(np.shape(out))), _scalar(np.zeros(np.shape(out))))
    if zeta is None:
        zeta = draw_small_scales(mp, t, n_samples, rng, values.shape[:-2])
    n_samples = zeta.shape[-3]
    logw = _log_weights(values, zeta, mp)
    _check_weights(logw)
    lse = logsumexp(logw, axis=-1)
    value = math.log(n_samples) - lse
    w = np.exp(logw - lse[..., None])  # normalised
    ess = 1.0 / np.sum(w**2, axis=-1)
    # delta method: SE(-log mean W) = sd(W)/(sqrt(N) mean W)
    rel = np.sqrt(np.maximum(n_samples * np.sum(w**2, axis=-1) - 1.0, 0.0) / max(n_samples - 1, 1))
    return RenormEstimate(_scalar(value), n_samples, _scalar(ess), _scalar(rel))


def _weighted(w, fields):
    """``sum_i w[..., i] * fields[..., i, :, :]`` as a batched matrix product."""
    shape = fields.shape
    flat = fields.reshape(shape[:-2] + (-1,))
    return (w[..., None, :] @ flat)[..., 0, :].reshape(shape[:-3] + shape[-2:])


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def grad_vt_estimate(phi, t, mp: ModelParams, n_samples: int = 4096, rng=None, zeta=None) -> RenormEstimate:
    """Self-normalised importance estimate of ``grad v_t(phi)``."""
    values = _raw(phi)
    if t == 0:
        _, grad = v0_and_grad(values, mp)
        return RenormEstimate(grad, 1, _scalar(np.ones(values.shape[:-2])), np.zeros_like(grad))
    if zeta is None:
        zeta = draw_small_scales(mp, t, n_samples, rng, values.shape[:-2])
    n_samples = zeta.shape[-3]
    shifted = values[..., None, :, :] + zeta
    pot, grads = v0_and_grad(shifted, mp)
    logw = -pot
    _check_weights(logw)
    w = np.exp(logw - np.max(logw, axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    grad = _weighted(w, grads)
    ess = 1.0 / np.sum(w**2, axis=-1)
    dev = grads - grad[..., None, :, :]
    se = np.sqrt(_weighted(w**2, dev**2))
    return RenormEstimate(grad, n_samples, _scalar(ess), se)


def gradient_mean(values: np.ndarray, t, mp: ModelParams, zeta: np.ndarray):
    """Gradient estimate and ESS only, for the flow's inner loop."""
    pot, grads = v0_and_grad(values[..., None, :, :] + zeta, mp)
    logw = -pot
    _check_weights(logw)
    w = np.exp(logw - np.max(logw, axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    return _weighted(w, grads), 1.0 / np.sum(w**2, axis=-1)


def l1_gradient_diagnostic(phi, t, mp: ModelParams, est: RenormEstimate) -> dict:
    """Ratio of ``||grad v_t(phi)||_L1`` to a scale-adapted Wick majorant.

    The majorant is ``sqrt(beta) lam int (ell_t/eps)**(beta/4pi) :V(phi): dx``
    with ``ell_t = max(L_t, eps)``; at ``t = 0`` it is ``sqrt(beta) v0(phi)``.
    ``ratio_smoothed`` uses instead ``sqrt(beta) E[v0(phi + zeta)]``, computed
    exactly through ``E exp(a zeta) = exp(a**2 c_t(0,0)/2)``.  Reweighting by
    the decreasing factor ``exp(-v0)`` can only lower the mean of ``v0``, so
    this ratio is at most 1.
    """
    values = _raw(phi)
    grad = np.asarray(est.value)
    l1 = integrate(np.abs(grad))
    bare = v0(values, mp)
    eps = mp.grid.epsilon
    ell = max(scale_length(mp.scale, t), eps)
    majorant = mp.sqrt_beta * bare * (ell / eps) ** (mp.beta / (4 * math.pi))
    smoothing = 0.0 if t == 0 else 0.5 * mp.beta * float(np.sum(c_hat(mp.scale, t)))
    smoothed = mp.sqrt_beta * bare * math.exp(smoothing)
    return {
        "t": float(t),
        "l1_gradient": _scalar(l1),
        "majorant": _scalar(majorant),
        "ratio": _scalar(l1 / majorant),
        "ratio_smoothed": _scalar(l1 / smoothed),
        "model": Model(mp.model).value,
    }
