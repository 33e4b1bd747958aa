"""Backward Polchinski flow coupling the interacting field to the GFF.

The difference field is integrated from ``T_max`` down to ``0``::

    Phi_delta(t_j) = Phi_delta(t_{j+1}) - (c_hat(t_{j+1}) - c_hat(t_j)) * g_j
    g_j = grad v_{t_{j+1}}(Phi_E(t_{j+1}))

i.e. an explicit Euler step with the drift frozen at the right endpoint, and
the covariance integral over the step done exactly.  The Gaussian part is a
:class:`GffPath` built on the same grid, and ``Phi_E = Phi_delta + Phi_gff``
is formed by that one addition, so the decomposition holds exactly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StepRejectedError
from .lattice import TorusGrid, apply_even, field_from_bytes, field_to_bytes, spectral_energy
from .potential import Model, ModelParams, WickConvention
from .renorm import draw_small_scales, gradient_mean
from .scales import (
    GffPath,
    ScaleGrid,
    ScaleParams,
    _as_rng,
    c_hat,
    c_increment,
    gff_path,
    q_hat,
    q_integral,
)

DEFAULT_HORIZON = 128.0  # T_max * m**2
DEFAULT_T_MIN = 2.0**-20


@dataclass(frozen=True)
class FlowConfig:
    scale_grid: ScaleGrid
    mc_samples: int = 256
    drift_clamp: float = 10.0
    chunk_elements: int = 2**21
    check_horizon: bool = True

    @classmethod
    def for_mass(cls, m: float, per_octave: int = 2, t_min: float = DEFAULT_T_MIN, horizon: float = DEFAULT_HORIZON, **kw):
        return cls(ScaleGrid.dyadic(horizon / m**2, t_min, per_octave), **kw)

    def refined(self) -> "FlowConfig":
        return FlowConfig(self.scale_grid.refine(), self.mc_samples, self.drift_clamp, self.chunk_elements, self.check_horizon)

    def chunk_replicas(self, n: int) -> int:
        per_replica = max(self.mc_samples, len(self.scale_grid) + 1) * n * n
        return max(1, self.chunk_elements // per_replica)


@dataclass
class FlowPath:
    """Replica batch of coupled paths on the nodes ``0 = t_0 < ... < t_N``.

    Field arrays have shape ``(R, N+1, n, n)``; ``gradients[:, j]`` is the drift
    gradient used on step ``[t_j, t_{j+1}]``.
    """

    model: ModelParams
    scale_grid: ScaleGrid
    phi_gff: np.ndarray
    phi_delta: np.ndarray
    gradients: np.ndarray
    ess: np.ndarray
    mc_samples: int
    phi_e: np.ndarray = field(init=False)

    def __post_init__(self):
        self.phi_e = self.phi_delta + self.phi_gff

    @property
    def nodes(self) -> np.ndarray:
        return self.scale_grid.nodes

    @property
    def replicas(self) -> int:
        return self.phi_e.shape[0]

    def at(self, t):
        """``(Phi_E, Phi_gff, Phi_delta)`` at a grid time."""
        j = self.scale_grid.index(t)
        return self.phi_e[:, j], self.phi_gff[:, j], self.phi_delta[:, j]

    def drift_steps(self) -> np.ndarray:
        """``Phi_delta(t_j) - Phi_delta(t_{j+1})`` per step."""
        return self.phi_delta[:, :-1] - self.phi_delta[:, 1:]

    def terminal_trace(self) -> float:
        """Variance trace ``sum_k (c_inf - c_T)(k)`` dropped by the terminal rule."""
        p = self.model.scale
        return float(np.sum(c_hat(p, math.inf) - c_hat(p, self.scale_grid.t_max)))


def _step_multipliers(p: ScaleParams, sg: ScaleGrid) -> list[np.ndarray]:
    nodes = sg.nodes
    return [c_increment(p, nodes[j], nodes[j + 1], "half") for j in range(len(sg))]


def _check_horizon(mp: ModelParams, fc: FlowConfig):
    if fc.check_horizon and fc.scale_grid.t_max * mp.m**2 < 100:
        raise DomainError(
            f"T_max * m^2 = {fc.scale_grid.t_max * mp.m**2:.3g} < 100; the zero terminal value is not justified"
        )


def integrate_flow(mp: ModelParams, fc: FlowConfig, rng, replicas: int = 1, gff: GffPath | None = None) -> FlowPath:
    """Integrate one batch of coupled paths.

    ``gff`` supplies the Gaussian path (shape ``(R, N+1, n, n)``); otherwise it
    is sampled from a child stream of ``rng``.  Drift Monte Carlo uses another
    child stream.
    """
    _check_horizon(mp, fc)
    sg = fc.scale_grid
    rng_gff, rng_mc = _as_rng(rng).spawn(2)
    if gff is None:
        gff = gff_path(mp.scale, sg, rng_gff, replicas)
    phi_gff = np.asarray(gff.fields)
    if phi_gff.ndim == 3:
        phi_gff = phi_gff[None]
    if gff.scale_grid != sg:
        raise DomainError("GFF path and flow use different scale grids")
    R, N1, n, _ = phi_gff.shape
    N = N1 - 1
    delta = np.zeros_like(phi_gff)
    grads = np.zeros((R, N, n, n))
    ess = np.full((R, N), float(fc.mc_samples))
    if mp.lam == 0:
        return FlowPath(mp, sg, phi_gff, delta, grads, ess, fc.mc_samples)

    mults = _step_multipliers(mp.scale, sg)
    nodes = sg.nodes
    for j in range(N - 1, -1, -1):
        t_hi = nodes[j + 1]
        phi_hi = delta[:, j + 1] + phi_gff[:, j + 1]
        zeta = draw_small_scales(mp, t_hi, fc.mc_samples, rng_mc, (R,))
        g, ess[:, j] = gradient_mean(phi_hi, t_hi, mp, zeta)
        step = apply_even(mults[j], g)
        size = float(np.max(np.abs(step)))
        if not size <= fc.drift_clamp:
            raise StepRejectedError(
                f"drift step of size {size:.3g} at scale t = {t_hi:.4g} exceeds clamp {fc.drift_clamp}",
                scale=t_hi,
                magnitude=size,
            )
        grads[:, j] = g
        delta[:, j] = delta[:, j + 1] - step
    return FlowPath(mp, sg, phi_gff, delta, grads, ess, fc.mc_samples)


def chunk_sizes(total: int, chunk: int) -> list[int]:
    return [min(chunk, total - i) for i in range(0, total, chunk)]


def flow_ensemble(mp: ModelParams, fc: FlowConfig, seed, replicas: int, reduce=None, workers: int = 1):
    """Run ``replicas`` paths in memory-bounded chunks.

    Chunk ``i`` draws from child ``i`` of ``SeedSequence(seed)`` so results do
    not depend on anything but ``(mp, fc, seed, replicas)``, whatever the
    number of ``workers``.  With ``reduce`` each chunk's :class:`FlowPath` is
    mapped through it and the list of results is returned; otherwise the
    chunks are concatenated.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sizes = chunk_sizes(replicas, fc.chunk_replicas(mp.grid.n))
    children = ss.spawn(len(sizes))

    def run(job):
        size, child = job
        path = integrate_flow(mp, fc, np.random.default_rng(child), size)
        return path if reduce is None else reduce(path)

    jobs = list(zip(sizes, children))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, jobs))
    else:
        out = [run(job) for job in jobs]
    if reduce is not None:
        return out
    return concatenate(out)


def concatenate(paths: list[FlowPath]) -> FlowPath:
    first = paths[0]
    return FlowPath(
        first.model,
        first.scale_grid,
        np.concatenate([p.phi_gff for p in paths]),
        np.concatenate([p.phi_delta for p in paths]),
        np.concatenate([p.gradients for p in paths]),
        np.concatenate([p.ess for p in paths]),
        first.mc_samples,
    )


@dataclass
class DriftPath:
    """Drift ``u`` on a scale grid, piecewise described per step.

    ``profile="gradient"``: ``u_tau = -q_tau g_j`` on step ``j`` (the minimiser
    drift with frozen gradient ``g_j``).  ``profile="constant"``: ``u_tau = w_j``.
    Step fields have shape ``(..., N, n, n)``.
    """

    params: ScaleParams
    scale_grid: ScaleGrid
    fields: np.ndarray
    profile: str = "gradient"

    def __post_init__(self):
        if self.profile not in ("gradient", "constant"):
            raise ValueError(f"unknown drift profile {self.profile!r}")

    @property
    def nodes(self) -> np.ndarray:
        return self.scale_grid.nodes

    def _step_multiplier(self, j: int) -> np.ndarray:
        nodes = self.nodes
        if self.profile == "gradient":
            return -c_increment(self.params, nodes[j], nodes[j + 1], "half")
        return q_integral(self.params, nodes[j], nodes[j + 1], "half")

    def step_increment(self, j: int) -> np.ndarray:
        """``int_{t_j}^{t_{j+1}} q_tau u_tau d tau``."""
        return apply_even(self._step_multiplier(j), self.fields[..., j, :, :])

    def step_budget(self, j: int) -> np.ndarray:
        """``int_{t_j}^{t_{j+1}} ||u_tau||^2 d tau``."""
        nodes = self.nodes
        w = self.fields[..., j, :, :]
        if self.profile == "gradient":
            return spectral_energy(w, c_increment(self.params, nodes[j], nodes[j + 1], "half"))
        return (nodes[j + 1] - nodes[j]) * spectral_energy(w)

    def step_budgets(self) -> np.ndarray:
        """All step budgets, shape ``(..., N)``."""
        return np.stack([self.step_budget(j) for j in range(len(self.scale_grid))], axis=-1)

    def representative(self) -> np.ndarray:
        """``u`` at each step's right endpoint."""
        if self.profile == "constant":
            return self.fields
        nodes = self.nodes
        out = np.empty_like(self.fields)
        for j in range(len(self.scale_grid)):
            out[..., j, :, :] = -apply_even(q_hat(self.params, nodes[j + 1], layout="half"), self.fields[..., j, :, :])
        return out

    def _range(self, s, t):
        if s > t:
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        return self.scale_grid.index(s), self.scale_grid.index(t)

    def integrated(self, s, t) -> np.ndarray:
        """``I_{s,t}(u) = int_s^t q_tau u_tau d tau``, summed from the top step down."""
        lo, hi = self._range(s, t)
        acc = np.zeros(self.fields.shape[:-3] + self.fields.shape[-2:])
        for j in range(hi - 1, lo - 1, -1):
            acc = acc + self.step_increment(j)
        return acc

    def l2_budget(self, s, t) -> np.ndarray:
        lo, hi = self._range(s, t)
        acc = np.zeros(self.fields.shape[:-3])
        for j in range(hi - 1, lo - 1, -1):
            acc = acc + self.step_budget(j)
        return acc if acc.ndim else float(acc)


def minimiser_drift(path: FlowPath) -> DriftPath:
    return DriftPath(path.model.scale, path.scale_grid, path.gradients, "gradient")


def integrated_drift(d: DriftPath, s, t) -> np.ndarray:
    return d.integrated(s, t)


def stability_weight(m: float, t) -> float:
    return 1.0 / (t * m**2 + 1.0) ** 2


def stability_budget(m: float, t) -> float:
    """``int_t^inf g_s ds = 1/(m^2 (t m^2 + 1))``."""
    return 1.0 / (m**2 * (t * m**2 + 1.0))


def stability_monitor(path: FlowPath, which: str = "e") -> np.ndarray:
    """``g_t sum_k |(t A + 1) Phi_hat_t(k)|^2`` at every node, shape ``(R, N+1)``."""
    fields = {"e": path.phi_e, "gff": path.phi_gff, "delta": path.phi_delta}[which]
    p = path.model.scale
    a = p.symbol("half")
    m = p.m
    out = np.empty(fields.shape[:2])
    for j, t in enumerate(path.nodes):
        out[:, j] = stability_weight(m, t) * spectral_energy(fields[:, j], (t * a + 1.0) ** 2)
    return out


# binary bundle: magic, header length, JSON header, then Field records in
# order (gff, delta) per replica per node followed by gradients per step

_MAGIC = b"GFFFLOW1"


def save_flow_bundle(path, fp: FlowPath) -> None:
    header = {
        "model": fp.model.model.value,
        "beta": fp.model.beta,
        "lam": fp.model.lam,
        "mass": fp.model.m,
        "n": fp.model.grid.n,
        "wick": fp.model.wick.value,
        "times": list(fp.scale_grid.times),
        "replicas": fp.replicas,
        "mc_samples": fp.mc_samples,
        "ess": fp.ess.tolist(),
        "terminal_trace": fp.terminal_trace(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in (fp.phi_gff, fp.phi_delta, fp.gradients):
            for r in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    fh.write(field_to_bytes(arr[r, j]))


def load_flow_bundle(path) -> FlowPath:
    data = open(path, "rb").read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path} is not a flow bundle")
    size = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16 : 16 + size])
    offset = 16 + size
    n = header["n"]
    sg = ScaleGrid(tuple(header["times"]))
    R, N = header["replicas"], len(sg)

    def read(count):
        nonlocal offset
        out = np.empty((R, count, n, n))
        for r in range(R):
            for j in range(count):
                f, offset = field_from_bytes(data, offset)
                out[r, j] = f.values
        return out

    gff, delta, grads = read(N + 1), read(N + 1), read(N)

    mp = ModelParams(
        Model(header["model"]),
        header["beta"],
        ScaleParams(header["mass"], TorusGrid(n)),
        header["lam"],
        WickConvention(header["wick"]),
    )
    return FlowPath(mp, sg, gff, delta, grads, np.asarray(header["ess"]), header["mc_samples"])
