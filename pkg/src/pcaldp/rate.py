"""Donsker-Varadhan action functional on enumerated finite chains.

The primal program minimises ``D(mu || mu^P)`` over couplings ``mu`` whose
two marginals both equal ``nu``. With ``K(x, y) = nu(x) P(x, y)`` the
minimiser has the scaling form ``mu = diag(a) K diag(b)``, and the row
constraint forces ``a = 1 / (P b)``. Writing ``b = exp(g)`` turns the
problem into maximising the concave function

    J(g) = sum_x nu(x) [g(x) - log (P e^g)(x)],

which is exactly the variational lower bound with test function ``f = e^g``.
Every ``g`` therefore yields a valid lower bound, and rounding the induced
coupling onto the polytope yields a valid upper bound; their difference is
the certified gap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import FiniteChain, build_chain
from .entropy import (Coupling, PartitionPair, coupling_push, partition_entropy,
                      rel_entropy)
from .lattice import LocalKernel
from .measures import CylinderMeasure, half_l1, project

__all__ = ["FiniteChain", "build_chain", "RateResult", "RateConvergenceError", "dv_rate_primal",
           "dv_rate_dual", "certify", "window_exhaustion", "local_tilt"]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000
NEWTON_MAX_STATES = 2048


@dataclass(frozen=True, eq=False)
class RateResult:
    value: float
    optimal_coupling: Coupling
    dual_certificate: np.ndarray
    dual_value: float
    gap: float
    iterations: int
    tolerance: float
    marginal_error: float
    nu: np.ndarray
    truncated: bool = True

    def to_dict(self) -> dict:
        return {"value": self.value, "dual_value": self.dual_value, "gap": self.gap,
                "iterations": self.iterations, "tolerance": self.tolerance,
                "marginal_error": self.marginal_error,
                "label": "finite truncation" if self.truncated else "exact"}


class RateConvergenceError(RuntimeError):
    def __init__(self, message: str, best: RateResult):
        super().__init__(f"{message} (best gap {best.gap:.3g} after {best.iterations} iterations)")
        self.best = best


def _as_distribution(chain: FiniteChain, nu) -> np.ndarray:
    if isinstance(nu, CylinderMeasure):
        if nu.window != chain.sites:
            raise ValueError("nu must be given on the whole truncation")
        nu = nu.probs
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (chain.n_states,):
        raise ValueError(f"nu must have {chain.n_states} entries")
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-10:
        raise ValueError("nu is not a probability vector")
    return nu


def _induced(P: np.ndarray, nu: np.ndarray, g: np.ndarray):
    """Tilted kernel ``Q`` for test function ``e^g``, its stationarity defect and ``J(g)``."""
    e = np.exp(g - g.max())
    pe = P @ e
    Q = P * e[None, :] / pe[:, None]
    colmass = nu @ Q
    dual = float(nu @ (g - g.max() - np.log(pe)))
    return Q, colmass, dual


def round_to_marginals(F: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Move a nonnegative matrix onto the transportation polytope ``U(r, c)``.

    Rows and columns that are too heavy are scaled down, and the deficit is
    filled by a rank-one correction (Altschuler, Weed and Rigollet, 2017).
    """
    rows = F.sum(axis=1)
    scale = np.divide(r, rows, out=np.zeros_like(r), where=rows > 0)
    F = F * np.minimum(scale, 1.0)[:, None]
    cols = F.sum(axis=0)
    scale = np.divide(c, cols, out=np.zeros_like(c), where=cols > 0)
    F = F * np.minimum(scale, 1.0)[None, :]
    er = r - F.sum(axis=1)
    ec = c - F.sum(axis=0)
    total = er.sum()
    if total > 0:
        F = F + np.outer(er, ec) / total
    return F


def _newton_direction(Q: np.ndarray, nu: np.ndarray, colmass: np.ndarray) -> np.ndarray:
    grad = nu - colmass
    H = np.diag(colmass) - Q.T @ (nu[:, None] * Q)
    n = len(nu)
    try:
        return np.linalg.solve(H + np.ones((n, n)) / n, grad)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, grad, rcond=None)[0]


def dv_rate_primal(chain: FiniteChain, nu, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> RateResult:
    """Minimum of ``D(mu || mu^P)`` over couplings with both marginals ``nu``.

    Raises :class:`RateConvergenceError` (carrying the best iterate) when the
    certified gap does not reach ``tol`` within ``max_iter`` iterations.
    """
    nu = _as_distribution(chain, nu)
    P_full = np.asarray(chain.transition)
    supp = np.flatnonzero(nu > 0)
    P = P_full[np.ix_(supp, supp)]
    if np.any(P <= 0):
        raise ValueError("the chain has zero transitions inside supp(nu); positivity (A3) is required")
    nus = nu[supp]
    g = np.zeros(len(supp))
    iterations = 0
    use_newton = len(supp) <= NEWTON_MAX_STATES

    def certificate(g):
        Q, colmass, _ = _induced(P, nus, g)
        F = round_to_marginals(nus[:, None] * Q, nus, nus)
        table = np.zeros_like(P_full)
        table[np.ix_(supp, supp)] = F
        f = np.full(chain.n_states, 0.0)
        f[supp] = np.exp(g - g.max())
        if len(supp) < chain.n_states:
            f[f == 0] = f[supp].min() * 1e-30
        coupling = Coupling(chain, table)
        primal = rel_entropy(table, coupling_push(coupling).table)
        dual = dv_rate_dual(chain, nu, f)
        err = max(float(np.max(np.abs(table.sum(axis=1) - nu))),
                  float(np.max(np.abs(table.sum(axis=0) - nu))))
        return RateResult(primal, coupling, f, dual, primal - dual, iterations, tol, err, nu,
                          chain.kernel.topology.kind == "halfline")

    check_every = 1
    while True:
        Q, colmass, dual = _induced(P, nus, g)
        err = float(np.abs(colmass - nus).sum())
        if iterations % check_every == 0 or err < 1e-12 or iterations >= max_iter:
            best = certificate(g)
            if -1e-9 <= best.gap <= tol:
                return best
            if iterations >= max_iter:
                raise RateConvergenceError("duality gap above tolerance", best)
            check_every = 1 if (use_newton or err < 1e-9) else 25
        iterations += 1
        if use_newton and err < 1e-3:
            step = _newton_direction(Q, nus, colmass)
            t = 1.0
            while t > 1e-8:
                _, _, trial = _induced(P, nus, g + t * step)
                if trial >= dual - 1e-15:
                    break
                t *= 0.5
            g = g + t * step if t > 1e-8 else g + np.log(nus / colmass)
        else:
            g = g + np.log(nus / colmass)
        g -= g.max()


def dv_rate_dual(chain: FiniteChain, nu, f) -> float:
    """Lower bound ``sum_x nu(x) log(f(x) / (P f)(x))`` on ``I(nu)`` for any positive ``f``."""
    nu = _as_distribution(chain, nu)
    f = np.asarray(f, dtype=float)
    if f.shape != nu.shape:
        raise ValueError("f must be a vector over the states")
    if np.any(f <= 0) or not np.all(np.isfinite(f)):
        raise ValueError("f must be strictly positive")
    pf = np.asarray(chain.transition) @ f
    pos = nu > 0
    return float(np.sum(nu[pos] * np.log(f[pos] / pf[pos])))


@dataclass
class Certificate:
    passed: bool
    primal: float
    dual: float
    gap: float
    marginal_error: float
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "primal": self.primal, "dual": self.dual, "gap": self.gap,
                "marginal_error": self.marginal_error, "failures": self.failures}


def certify(result: RateResult, marginal_tol: float = 1e-8) -> Certificate:
    """Recompute the primal objective and the dual bound from scratch and check them."""
    mu = result.optimal_coupling
    chain = mu.chain
    nu = result.nu
    primal = rel_entropy(mu.table, coupling_push(mu).table)
    dual = dv_rate_dual(chain, nu, result.dual_certificate)
    gap = primal - dual
    marg = max(float(np.max(np.abs(mu.left - nu))), float(np.max(np.abs(mu.right - nu))))
    failures = []
    if not -1e-9 <= gap <= result.tolerance:
        failures.append(f"duality gap {gap:.3g} outside [-1e-9, {result.tolerance:g}]")
    if marg > marginal_tol:
        failures.append(f"coupling is not in M_S with marginal nu (error {marg:.3g})")
    if abs(primal - result.value) > 1e-12 * max(1.0, abs(primal)):
        failures.append(f"reported value {result.value!r} differs from the recomputed primal {primal!r}")
    if result.value < dual - 1e-9:
        failures.append(f"reported value {result.value!r} is below the dual bound {dual!r}")
    return Certificate(not failures, primal, dual, gap, marg, failures)


def local_tilt(chain: FiniteChain, base, site: int, beta: float) -> np.ndarray:
    """``nu(x) proportional to base(x) exp(beta * x(site))``."""
    base = np.asarray(base, dtype=float)
    col = chain.sites.index(site)
    w = base * np.exp(beta * chain.states[:, col])
    return w / w.sum()


# -- window exhaustion ------------------------------------------------------------


@dataclass(frozen=True)
class WindowRow:
    n: int
    window: tuple
    alpha: float
    d_phi: float
    rhs: float
    tail_sup: float
    n_star_sup: float
    edge_affected: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "window": list(self.window), "alpha_n": self.alpha, "d_phi_n": self.d_phi,
                "rhs": self.rhs, "tail_sup": self.tail_sup, "n_star_sup": self.n_star_sup,
                "edge_affected": self.edge_affected}


@dataclass(frozen=True, eq=False)
class WindowTable:
    rate: RateResult
    d_full: float
    rows: tuple

    def failures(self, tol: float = 1e-9) -> list:
        """Monotonicity and bound violations among rows not affected by the truncation edge."""
        rows = [r for r in self.rows if not r.edge_affected]
        out = []
        for a, b in zip(rows, rows[1:]):
            if b.alpha > a.alpha + tol:
                out.append(f"alpha increases from n={a.n} to n={b.n}")
            if b.d_phi < a.d_phi - tol:
                out.append(f"D_phi decreases from n={a.n} to n={b.n}")
        kernel = self.rate.optimal_coupling.chain.kernel
        for r in rows:
            if r.tail_sup > r.rhs + tol:
                out.append(f"n={r.n}: tail supremum {r.tail_sup:.6g} exceeds bound {r.rhs:.6g}")
            d_phi = set(kernel.dependent_closure(r.window))
            for m in self.rows:
                if d_phi <= set(m.window) and m.alpha > r.rhs + tol:
                    out.append(f"alpha_{m.n}={m.alpha:.6g} exceeds the n={r.n} bound {r.rhs:.6g}")
        return out

    def to_dict(self) -> dict:
        return {"value": self.rate.value, "gap": self.rate.gap, "iterations": self.rate.iterations,
                "marginal_error": self.rate.marginal_error, "d_full": self.d_full,
                "window_table": [r.to_dict() for r in self.rows]}


def window_exhaustion(kernel: LocalKernel, nu, windows: Sequence[Sequence[int]] | None = None,
                       tol: float = DEFAULT_TOL, chain: FiniteChain | None = None) -> WindowTable:
    """Nested-window table of ``alpha_n`` and ``D_{phi_n}`` for the optimal coupling of ``nu``.

    ``alpha_n`` is the supremum of ``|nu^P(A) - nu(A)|`` over events outside
    ``phi_n``. ``rhs`` is ``sqrt((D - D_{phi_n}) / 2)`` with ``D = I(nu)``;
    ``tail_sup`` is the same supremum over events outside ``D(phi_n)``,
    which the window bound controls directly. Windows default to the
    initial segments ``{0..n-1}``.
    """
    chain = chain or build_chain(kernel)
    nu = _as_distribution(chain, nu)
    if windows is None:
        windows = [tuple(range(n)) for n in range(1, kernel.n_sites + 1)]
    windows = [tuple(sorted(w)) for w in windows]
    for a, b in zip(windows, windows[1:]):
        if not set(a) <= set(b):
            raise ValueError("windows must be nested")
    result = dv_rate_primal(chain, nu, tol=tol)
    mu = result.optimal_coupling
    mu_p = coupling_push(mu)
    d_full = rel_entropy(mu.table, mu_p.table)
    k = chain.alphabet
    sites = chain.sites
    nu_p = nu @ np.asarray(chain.transition)
    rows = []
    for n, phi in enumerate(windows, start=1):
        pp = PartitionPair.from_window(kernel, phi)
        outside = kernel.complement(phi)
        d_star = kernel.complement(kernel.dependent_closure(phi))
        d_phi = partition_entropy(mu, mu_p, pp)
        rows.append(WindowRow(
            n, phi,
            alpha=half_l1(project(nu_p, sites, outside, k), project(nu, sites, outside, k)),
            d_phi=d_phi,
            rhs=math.sqrt(max(d_full - d_phi, 0.0) / 2.0),
            tail_sup=half_l1(project(nu_p, sites, d_star, k), project(nu, sites, d_star, k)),
            n_star_sup=half_l1(project(nu_p, sites, pp.n_star, k), project(nu, sites, pp.n_star, k)),
            edge_affected=any(kernel.is_clipped(z) for z in phi),
        ))
    return WindowTable(result, d_full, tuple(rows))
