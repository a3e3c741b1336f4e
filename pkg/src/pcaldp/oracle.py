"""Brute-force reference computations used as ground truth.

Nothing here calls into the entropy or rate modules: coarsening is done
with dictionaries, sums with :func:`math.fsum`, transitions by explicit
loops over sites.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.optimize import minimize

from .chain import FiniteChain
from .lattice import LocalKernel, cylinder_transition

GRID_MAX_STATES = 16


class BudgetError(ValueError):
    """An oracle was asked for more work than its budget allows."""


class UniquenessError(ValueError):
    """The chain may have more than one stationary distribution."""


@dataclass(frozen=True)
class OracleBudget:
    max_states: int = 4096
    max_dp_T: int = 1000

    def __post_init__(self):
        if self.max_states < 1 or self.max_dp_T < 1:
            raise ValueError("budget entries must be positive")


def _matrix(chain) -> np.ndarray:
    P = chain.transition if isinstance(chain, FiniteChain) else chain
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    return P


def exact_stationary(chain, budget: OracleBudget = OracleBudget()) -> np.ndarray:
    """Solve ``nu P = nu`` with ``sum nu = 1`` as one linear system.

    Raises
    ------
    UniquenessError
        If the chain has a zero entry and ``I - P`` has a null space of
        dimension above one.
    """
    P = _matrix(chain)
    n = P.shape[0]
    if n > budget.max_states:
        raise BudgetError(f"{n} states exceed the oracle budget of {budget.max_states}")
    A = P.T - np.eye(n)
    if not np.all(P > 0) and np.linalg.matrix_rank(A) < n - 1:
        raise UniquenessError("uniqueness not guaranteed: several stationary distributions exist")
    # with a one-dimensional null space, swapping one balance row for the
    # normalisation leaves a nonsingular square system
    system = A.copy()
    system[-1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        nu = np.linalg.solve(system, rhs)
        nu = nu + np.linalg.solve(system, rhs - system @ nu)
    except np.linalg.LinAlgError:
        raise UniquenessError("uniqueness not guaranteed: singular balance system") from None
    if np.any(nu < -1e-12):
        raise UniquenessError("linear solve produced a signed vector; uniqueness not guaranteed")
    return np.clip(nu, 0.0, None)


def exact_occupation_law(chain, x0: int, T: int, target_states,
                         budget: OracleBudget = OracleBudget()) -> np.ndarray:
    """Law of ``#{t < T : X_t in target}`` started from state index ``x0``.

    Dynamic programme over (time, current state, count so far).
    """
    P = _matrix(chain)
    n = P.shape[0]
    if T < 1:
        raise ValueError("T must be at least 1")
    if T > budget.max_dp_T:
        raise BudgetError(f"T={T} exceeds the oracle budget of {budget.max_dp_T}")
    inside = np.zeros(n, dtype=bool)
    inside[list(target_states)] = True
    law = np.zeros((n, T + 1))
    law[x0, int(inside[x0])] = 1.0
    for _ in range(T - 1):
        moved = P.T @ law
        nxt = np.zeros_like(law)
        nxt[~inside] = moved[~inside]
        nxt[inside, 1:] = moved[inside, :-1]
        law = nxt
    return law.sum(axis=0)


def direct_entropy(mu, rho, labels: Sequence[Hashable] | None = None) -> float:
    """Relative entropy of the coarsenings of two tables to a labelled partition.

    ``labels[i]`` names the atom holding flat cell ``i``; ``None`` means
    every cell is its own atom.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if mu.shape != rho.shape:
        raise ValueError("tables must share an index space")
    if labels is None:
        labels = range(mu.size)
    a, b = defaultdict(list), defaultdict(list)
    for i, lab in enumerate(labels):
        a[lab].append(mu[i])
        b[lab].append(rho[i])
    terms = []
    for lab in a:
        p, q = math.fsum(a[lab]), math.fsum(b[lab])
        if p == 0.0:
            continue
        if q == 0.0:
            return math.inf
        terms.append(p * math.log(p / q))
    return math.fsum(terms)


def direct_half_l1(mu, rho, labels: Sequence[Hashable]) -> float:
    """``sup |mu(A) - rho(A)|`` over the algebra whose atoms are given by ``labels``."""
    mu = np.asarray(mu, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    diff = defaultdict(list)
    for i, lab in enumerate(labels):
        diff[lab].append(mu[i] - rho[i])
    return 0.5 * math.fsum(abs(math.fsum(v)) for v in diff.values())


def direct_transition(kernel: LocalKernel, budget: OracleBudget = OracleBudget()) -> np.ndarray:
    """Transition matrix by evaluating the cylinder product for every pair of states."""
    n = kernel.n_states
    if n > budget.max_states:
        raise BudgetError(f"{n} states exceed the oracle budget of {budget.max_states}")
    sites = kernel.sites
    states = list(itertools.product(range(kernel.alphabet), repeat=len(sites)))
    P = np.empty((n, n))
    for i, x in enumerate(states):
        xm = dict(zip(sites, x))
        for j, y in enumerate(states):
            P[i, j] = cylinder_transition(kernel, xm, sites, y)
    return P


def pair_labels(kernel: LocalKernel, left: Sequence[int], right: Sequence[int]) -> list:
    """Atom labels ``(x|left, y|right)`` for every cell of the flattened ``Gamma x Gamma`` table."""
    sites = kernel.sites
    li = [sites.index(z) for z in sorted(left)]
    ri = [sites.index(z) for z in sorted(right)]
    states = list(itertools.product(range(kernel.alphabet), repeat=len(sites)))
    return [(tuple(x[i] for i in li), tuple(y[i] for i in ri)) for x in states for y in states]


@dataclass(frozen=True)
class WindowTerms:
    d_full: float
    d_partition: float
    d_a1: float
    lhs: float


def direct_window_terms(kernel: LocalKernel, table, phi: Sequence[int],
                        transition: np.ndarray | None = None) -> WindowTerms:
    """Entropies and the window-bound left side for a coupling, by labelled coarsening."""
    phi = sorted(phi)
    P = direct_transition(kernel) if transition is None else np.asarray(transition)
    table = np.asarray(table, dtype=float)
    left = table.sum(axis=1)
    pushed = left[:, None] * P
    n_phi = set()
    for z in phi:
        n_phi.update(kernel.neighborhood(z))
    d_phi = {zp for zp in kernel.sites if set(kernel.neighborhood(zp)) & n_phi}
    n_star = [z for z in kernel.sites if z not in n_phi]
    d_star = [z for z in kernel.sites if z not in d_phi]
    everything = kernel.sites
    return WindowTerms(
        d_full=direct_entropy(table, pushed),
        d_partition=direct_entropy(table, pushed, pair_labels(kernel, n_phi, phi)),
        d_a1=direct_entropy(table, pushed, pair_labels(kernel, everything, sorted(set(phi) | set(d_star)))),
        lhs=direct_half_l1(pushed, table, pair_labels(kernel, n_star, d_star)),
    )


def _dual_objective(P: np.ndarray, nu: np.ndarray) -> Callable:
    pos = nu > 0

    def value(g):
        pf = P @ np.exp(g)
        return float(np.sum(nu[pos] * (g[pos] - np.log(pf[pos]))))
    return value


def _coordinate_zoom(J: Callable, g: np.ndarray, resolution: int, width: float,
                     min_width: float = 1e-9, max_sweeps: int = 2000) -> tuple:
    best = J(g)
    offsets = np.linspace(-1.0, 1.0, resolution)
    for _ in range(max_sweeps):
        if width < min_width:
            break
        improved = False
        for i in range(g.size):
            base = g[i]
            for off in offsets * width:
                g[i] = base + off
                val = J(g)
                if val > best + 1e-15:
                    best, base, improved = val, g[i], True
            g[i] = base
        if not improved:
            width *= 0.5
    return best, g


def dual_grid_max(chain, nu, restarts: int = 4, grid_resolution: int = 21,
                  seed: int = 0) -> float:
    """Lower bound on ``I(nu)`` by direct search over ``log f``.

    Up to 16 states a cyclic coordinate grid search with zoom is used;
    larger chains fall back to quasi-Newton ascent. Either way every
    restart starts from a seeded random point and the best value found is
    returned, which is a valid lower bound by construction.
    """
    P = _matrix(chain)
    nu = np.asarray(nu, dtype=float)
    J = _dual_objective(P, nu)
    rng = np.random.default_rng(seed)
    starts = [np.zeros(nu.size)] + [rng.normal(0.0, 1.0, nu.size) for _ in range(restarts)]
    best = -math.inf
    for g0 in starts:
        if nu.size <= GRID_MAX_STATES:
            val, _ = _coordinate_zoom(J, g0.copy(), grid_resolution, width=2.0)
        else:
            res = minimize(lambda g: -J(g), g0, method="L-BFGS-B",
                           options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15})
            val = J(res.x)
        best = max(best, val)
    return best
