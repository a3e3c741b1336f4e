"""Trajectory sampling, occupation measures and event-probability estimates.

Randomness is counter based: trajectory ``j`` of seed ``s`` owns the
Philox stream keyed by ``(s, j)``, and the uniform driving site ``z`` at
step ``t`` sits at position ``t * n_sites + z`` of that stream. Results
therefore do not depend on batching or on the order trajectories are run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator, Philox
from scipy.optimize import minimize, minimize_scalar
from statsmodels.stats.proportion import proportion_confint

from .chain import FiniteChain
from .lattice import LocalKernel, place_values
from .measures import CylinderMeasure
from .oracle import exact_occupation_law
from .rate import dv_rate_primal

_MASK64 = (1 << 64) - 1
_BATCH_DOUBLES = 1 << 22


def _stream(seed: int, traj: int) -> Philox:
    return Philox(key=((int(traj) & _MASK64) << 64) | (int(seed) & _MASK64))


def uniforms(seed: int, traj: int, start: int, count: int) -> np.ndarray:
    """Uniforms at positions ``start .. start + count - 1`` of stream ``(seed, traj)``."""
    bitgen = _stream(seed, traj)
    block, skip = divmod(int(start), 4)
    if block:
        bitgen.advance(block)
    return Generator(bitgen).random(skip + count)[skip:]


class _Sampler:
    """Per-site cumulative tables for inverse-CDF updates."""

    def __init__(self, kernel: LocalKernel):
        self.kernel = kernel
        k = kernel.alphabet
        pos = {z: i for i, z in enumerate(kernel.sites)}
        self.cols = [np.array([pos[y] for y in kernel.neighborhood(z)]) for z in kernel.sites]
        self.places = [place_values(len(c), k) for c in self.cols]
        self.cdfs = [np.cumsum(t, axis=1)[:, :-1] for t in kernel.tables]

    def step(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        out = np.empty_like(X)
        for z, (cols, places, cdf) in enumerate(zip(self.cols, self.places, self.cdfs)):
            rows = cdf[X[:, cols] @ places]
            out[:, z] = (U[:, z, None] >= rows).sum(axis=1)
        return out


def _initial(kernel: LocalKernel, x0) -> np.ndarray:
    if isinstance(x0, dict):
        x0 = [x0[z] for z in kernel.sites]
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (kernel.n_sites,):
        raise ValueError(f"x0 must assign a symbol to each of the {kernel.n_sites} sites")
    if np.any((x0 < 0) | (x0 >= kernel.alphabet)):
        raise ValueError("x0 has symbols outside the alphabet")
    return x0


def step(x, kernel: LocalKernel, u: np.ndarray) -> np.ndarray:
    """One synchronous update of configuration ``x`` driven by per-site uniforms ``u``."""
    x = _initial(kernel, x)
    u = np.asarray(u, dtype=float).reshape(1, kernel.n_sites)
    return _Sampler(kernel).step(x[None, :], u)[0]


def step_draws(x, kernel: LocalKernel, draws: int, seed: int) -> np.ndarray:
    """``draws`` independent one-step successors of ``x``, one trajectory index each."""
    x = _initial(kernel, x)
    U = np.stack([uniforms(seed, j, 0, kernel.n_sites) for j in range(draws)])
    return _Sampler(kernel).step(np.tile(x, (draws, 1)), U)


@dataclass(frozen=True, eq=False)
class Trajectory:
    configs: np.ndarray
    seed: int
    traj: int = 0


def _paths(kernel: LocalKernel, x0: np.ndarray, T: int, seed: int, trajs: Sequence[int],
           visit: Callable[[int, np.ndarray], None]) -> None:
    """Run trajectories ``trajs`` together and call ``visit(t, X_t)`` for ``t < T``."""
    n = kernel.n_sites
    sampler = _Sampler(kernel)
    X = np.tile(x0, (len(trajs), 1))
    visit(0, X)
    chunk = max(1, _BATCH_DOUBLES // max(1, len(trajs) * n))
    t = 1
    while t < T:
        steps = min(chunk, T - t)
        U = np.stack([uniforms(seed, j, (t - 1) * n, steps * n) for j in trajs])
        U = U.reshape(len(trajs), steps, n)
        for i in range(steps):
            X = sampler.step(X, U[:, i])
            visit(t + i, X)
        t += steps


def sample_trajectory(kernel: LocalKernel, x0, T: int, seed: int, traj: int = 0) -> Trajectory:
    x0 = _initial(kernel, x0)
    configs = np.empty((T, kernel.n_sites), dtype=np.int64)

    def visit(t, X):
        configs[t] = X[0]
    _paths(kernel, x0, T, seed, [traj], visit)
    configs.setflags(write=False)
    return Trajectory(configs, seed, traj)


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    """Visit counts of window assignments over ``T`` steps."""

    window: tuple
    counts: np.ndarray
    T: int
    alphabet: int = 2

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / self.T

    def normalized(self) -> CylinderMeasure:
        return CylinderMeasure(self.window, self.freqs, self.alphabet)


def _window_columns(kernel: LocalKernel, window: Sequence[int]) -> tuple:
    window = tuple(sorted(window))
    missing = set(window) - set(kernel.sites)
    if missing:
        raise ValueError(f"window sites {sorted(missing)} are not in the topology")
    cols = np.array([kernel.sites.index(z) for z in window], dtype=np.int64)
    return window, cols, place_values(len(window), kernel.alphabet)


def _count_paths(kernel, x0, T, window, seed, trajs) -> tuple:
    window, cols, places = _window_columns(kernel, window)
    size = kernel.alphabet ** len(window)
    counts = np.zeros((len(trajs), size), dtype=np.int64)
    rows = np.arange(len(trajs))

    def visit(t, X):
        counts[rows, X[:, cols] @ places] += 1
    _paths(kernel, _initial(kernel, x0), T, seed, trajs, visit)
    return window, counts


def run_occupation(kernel: LocalKernel, x0, T: int, window: Sequence[int], seed: int,
                   traj: int = 0) -> OccupationMeasure:
    """Occupation counts of ``window`` along one trajectory ``X_0 .. X_{T-1}``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    window, counts = _count_paths(kernel, x0, T, window, seed, [traj])
    return OccupationMeasure(window, counts[0], T, kernel.alphabet)


@dataclass(frozen=True)
class EventEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    successes: int
    samples: int
    T: int
    seed: int
    below_resolution: bool

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "successes": self.successes, "samples": self.samples, "T": self.T,
                "seed": self.seed, "below_resolution": self.below_resolution}


def estimate_event(kernel: LocalKernel, x0, T: int, window: Sequence[int],
                   event: Callable[[OccupationMeasure], bool], samples: int, seed: int,
                   batch: int = 1024) -> EventEstimate:
    """Fraction of independent trajectories whose occupation measure satisfies ``event``.

    The interval is the 95% Wilson score interval. With no successes the
    estimate is flagged as below resolution rather than extrapolated.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if T < 1:
        raise ValueError("T must be at least 1")
    hits = 0
    for lo in range(0, samples, batch):
        trajs = list(range(lo, min(lo + batch, samples)))
        win, counts = _count_paths(kernel, x0, T, window, seed, trajs)
        hits += sum(bool(event(OccupationMeasure(win, c, T, kernel.alphabet))) for c in counts)
    low, high = proportion_confint(hits, samples, alpha=0.05, method="wilson")
    return EventEstimate(hits / samples, float(low), float(high), hits, samples, T, seed, hits == 0)


def mass_at_least(cells: Sequence[int], threshold: float) -> Callable[[OccupationMeasure], bool]:
    """Event "the occupation measure gives the window cells ``cells`` mass at least ``threshold``"."""
    cells = list(cells)

    def event(xi: OccupationMeasure) -> bool:
        return int(xi.counts[cells].sum()) >= math.ceil(threshold * xi.T - 1e-9)
    return event


# -- desk-scale illustration of the upper bound -----------------------------------


def rate_infimum(chain: FiniteChain, target: Sequence[int], threshold: float,
                 tol: float = 1e-10) -> tuple:
    """``inf I(nu)`` over distributions with ``nu(target) >= threshold``; returns ``(value, nu)``."""
    n = chain.n_states
    target = np.isin(np.arange(n), list(target))
    if n == 2:
        hi = 1 if target[1] else 0

        def nu_of(q):
            nu = np.empty(2)
            nu[hi], nu[1 - hi] = q, 1.0 - q
            return nu
        res = minimize_scalar(lambda q: dv_rate_primal(chain, nu_of(q), tol=tol).value,
                              bounds=(threshold, 1.0), method="bounded",
                              options={"xatol": 1e-10})
        nu = nu_of(res.x)
        return dv_rate_primal(chain, nu, tol=tol).value, nu
    cons = [{"type": "eq", "fun": lambda v: v.sum() - 1.0},
            {"type": "ineq", "fun": lambda v: v[target].sum() - threshold}]
    start = np.where(target, threshold / target.sum(), (1 - threshold) / max(1, (~target).sum()))
    res = minimize(lambda v: dv_rate_primal(chain, np.clip(v, 0, None) / np.clip(v, 0, None).sum(),
                                            tol=tol).value,
                   start, method="SLSQP", bounds=[(0.0, 1.0)] * n, constraints=cons)
    nu = np.clip(res.x, 0, None)
    nu /= nu.sum()
    return dv_rate_primal(chain, nu, tol=tol).value, nu


@dataclass(frozen=True)
class BoundRow:
    T: int
    log_prob: float
    rate_estimate: float
    secant_slope: float | None


def upper_bound_illustration(chain: FiniteChain, x0: int, target: Sequence[int], threshold: float,
                             horizons: Sequence[int]) -> tuple:
    """Exact ``-log P(xi_T(target) >= threshold) / T`` against ``inf I`` over that set.

    Each row carries the raw decay ``-log p / T`` and the secant slope of
    ``-log p`` between consecutive horizons; the latter removes the
    sub-exponential prefactor and converges faster. Returns ``(inf I, rows)``.
    """
    inf_rate, _ = rate_infimum(chain, target, threshold)
    rows, prev = [], None
    for T in sorted(horizons):
        law = exact_occupation_law(chain, x0, T, target)
        need = math.ceil(threshold * T - 1e-9)
        logp = math.log(math.fsum(law[need:]))
        slope = None if prev is None else -(logp - prev[1]) / (T - prev[0])
        rows.append(BoundRow(T, logp, -logp / T, slope))
        prev = (T, logp)
    return inf_rate, rows
