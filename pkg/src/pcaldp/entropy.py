"""Relative entropies of joint measures against their kernel pushforwards.

A :class:`Coupling` is a probability table on ``Gamma x Gamma`` for a fully
enumerated truncation. For a window ``phi`` the relevant structure is

* ``N(phi)`` and ``phi``: the left/right site sets of the cell partition
  ``Delta = Lambda_{N(phi)} x Lambda_phi``;
* ``N*(phi)`` and ``D*(phi)``: the left/right site sets whose product algebra
  ``A_phi`` carries the variational bound.

All suprema over finite algebras are evaluated as half-L1 distances over
their atoms. Logarithms are natural.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .chain import FiniteChain
from .lattice import SUM_TOL, LocalKernel, WindowError, all_digits, cylinder_transition
from .measures import coarsen_pair, half_l1, project


class InfiniteEntropyError(ValueError):
    pass


class PositivityError(ValueError):
    """A cell of positive mass has zero reference mass (assumption A3 fails)."""


@dataclass(frozen=True, eq=False)
class Coupling:
    chain: FiniteChain
    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        n = self.chain.n_states
        if table.shape != (n, n):
            raise ValueError(f"coupling table must be {n}x{n}")
        if np.any(table < 0) or abs(table.sum() - 1.0) > SUM_TOL:
            raise ValueError("coupling table is not a probability table")
        object.__setattr__(self, "table", table)

    @property
    def left(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def right(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def marginal_gap(self) -> float:
        return float(np.max(np.abs(self.left - self.right)))

    def in_symmetric_set(self, tol: float = 1e-8) -> bool:
        """Membership in ``M_S``: equal left and right marginals."""
        return self.marginal_gap() <= tol


def coupling_push(mu: Coupling) -> Coupling:
    """``mu^P(x, y) = mu_L(x) P(x, y)``; depends on ``mu`` only through its left marginal."""
    return Coupling(mu.chain, mu.left[:, None] * mu.chain.transition)


def rel_entropy(mu, rho) -> float:
    """``sum mu ln(mu / rho)`` with ``0 ln 0 = 0``; ``math.inf`` when ``mu`` charges a ``rho``-null cell."""
    mu = np.asarray(mu, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if mu.shape != rho.shape:
        raise ValueError("tables must share an index space")
    pos = mu > 0
    if np.any(rho[pos] <= 0):
        return math.inf
    m, r = mu[pos], rho[pos]
    return float(np.sum(m * np.log(m / r)))


@dataclass(frozen=True)
class PartitionPair:
    """Site sets defining ``Delta`` (``n_phi`` x ``phi``) and ``A_0`` (``n_star`` x ``d_star``)."""

    phi: tuple
    n_phi: tuple
    n_star: tuple
    d_star: tuple

    @classmethod
    def from_window(cls, kernel: LocalKernel, phi: Sequence[int]) -> "PartitionPair":
        phi = tuple(sorted(phi))
        n_phi = kernel.neighborhood_closure(phi)
        d_phi = kernel.dependent_closure(phi)
        return cls(phi, n_phi, kernel.complement(n_phi), kernel.complement(d_phi))


def _check_same_chain(mu: Coupling, other: Coupling) -> None:
    if mu.chain is not other.chain and mu.table.shape != other.table.shape:
        raise ValueError("couplings live on different truncations")


def _cells(table: np.ndarray, sites: tuple, pp: PartitionPair, k: int) -> np.ndarray:
    """View of a joint table as ``[h, a, v, c]``.

    ``h``: assignment on ``n_phi`` (left), ``a``: on ``n_star`` (left),
    ``v``: on ``phi`` (right), ``c``: on ``d_star`` (right). Right sites
    outside ``phi`` and ``d_star`` are summed out. Left sites must be covered
    by ``n_phi`` and ``n_star``.
    """
    m = len(sites)
    if set(pp.n_phi) | set(pp.n_star) != set(sites) or set(pp.n_phi) & set(pp.n_star):
        raise ValueError("n_phi and n_star must partition the sites")
    if set(pp.phi) & set(pp.d_star):
        raise ValueError("phi and d_star must be disjoint")
    pos = {z: i for i, z in enumerate(sites)}
    arr = table.reshape((k,) * (2 * m))
    right_keep = set(pp.phi) | set(pp.d_star)
    drop = tuple(m + i for i, z in enumerate(sites) if z not in right_keep)
    if drop:
        arr = arr.sum(axis=drop)
    kept_right = [z for z in sites if z in right_keep]
    rpos = {z: m + i for i, z in enumerate(kept_right)}
    order = ([pos[z] for z in pp.n_phi] + [pos[z] for z in pp.n_star]
             + [rpos[z] for z in pp.phi] + [rpos[z] for z in pp.d_star])
    arr = arr.transpose(order)
    return arr.reshape(k ** len(pp.n_phi), k ** len(pp.n_star), k ** len(pp.phi), k ** len(pp.d_star))


def partition_entropy(mu: Coupling, mu_p: Coupling, pp: PartitionPair) -> float:
    """Relative entropy of ``mu`` to ``mu_p`` on the finite partition ``Delta``."""
    _check_same_chain(mu, mu_p)
    k = mu.chain.alphabet
    sites = mu.chain.sites
    a = coarsen_pair(mu.table, sites, pp.n_phi, pp.phi, k)
    b = coarsen_pair(mu_p.table, sites, pp.n_phi, pp.phi, k)
    if np.any((a > 0) & (b <= 0)):
        raise PositivityError("a Delta-cell has positive mass but zero pushforward mass (A3 violated)")
    return rel_entropy(a, b)


def a1_entropy(mu: Coupling, mu_p: Coupling, pp: PartitionPair) -> float:
    """Relative entropy on the algebra generated by ``Delta`` and ``A_0``."""
    k = mu.chain.alphabet
    sites = mu.chain.sites
    right = tuple(sorted(set(pp.phi) | set(pp.d_star)))
    return rel_entropy(coarsen_pair(mu.table, sites, sites, right, k),
                       coarsen_pair(mu_p.table, sites, sites, right, k))


class ChainRule(NamedTuple):
    d_a1: float
    d_partition: float
    conditional_terms: dict


def _xlogx_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos] / q[pos])
    return out


def chain_rule_decompose(mu: Coupling, pp: PartitionPair) -> ChainRule:
    """Split ``D_{A_1}(mu || mu^P)`` into the partition entropy plus conditional terms.

    Each conditional term is ``mu(cell) * D(mu_cell || mu^P_cell)`` on the
    atoms of ``A_0``; cells of zero ``mu``-mass contribute 0.
    """
    mu_p = coupling_push(mu)
    if not math.isfinite(rel_entropy(mu.table, mu_p.table)):
        raise InfiniteEntropyError("D(mu || mu^P) is infinite; check absolute continuity first")
    k = mu.chain.alphabet
    cm = _cells(mu.table, mu.chain.sites, pp, k)
    cp = _cells(mu_p.table, mu.chain.sites, pp, k)
    mass = cm.sum(axis=(1, 3))
    mass_p = cp.sum(axis=(1, 3))
    d_partition = float(_xlogx_ratio(mass, mass_p).sum())
    d_a1 = float(_xlogx_ratio(cm, cp).sum())
    terms = {}
    for h, v in zip(*np.nonzero(mass > 0)):
        p = cm[h, :, v, :] / mass[h, v]
        q = cp[h, :, v, :] / mass_p[h, v]
        terms[(int(h), int(v))] = float(mass[h, v] * _xlogx_ratio(p, q).sum())
    return ChainRule(d_a1, d_partition, terms)


@dataclass(frozen=True, eq=False)
class ConditionalMeasures:
    """Cell masses and the conditional measures of ``mu`` and ``mu^P`` on ``A_0`` atoms.

    ``cond[h, v]`` and ``cond_p[h, v]`` are arrays over ``(a, c)``. Cells with
    zero ``mu``-mass follow the convention ``mu_cell := mu^P_cell`` (or the
    ``A_0``-marginal of ``mu`` when the pushforward cell is empty too).
    """

    mass: np.ndarray
    mass_p: np.ndarray
    cond: np.ndarray
    cond_p: np.ndarray


def conditional_measures(mu: Coupling, pp: PartitionPair) -> ConditionalMeasures:
    mu_p = coupling_push(mu)
    k = mu.chain.alphabet
    cm = _cells(mu.table, mu.chain.sites, pp, k)
    cp = _cells(mu_p.table, mu.chain.sites, pp, k)
    mass = cm.sum(axis=(1, 3))
    mass_p = cp.sum(axis=(1, 3))
    a0_marginal = cm.sum(axis=(0, 2))
    H, A, V, C = cm.shape
    cond = np.empty((H, V, A, C))
    cond_p = np.empty((H, V, A, C))
    for h in range(H):
        for v in range(V):
            if mass_p[h, v] > 0:
                cond_p[h, v] = cp[h, :, v, :] / mass_p[h, v]
            else:
                cond_p[h, v] = a0_marginal
            cond[h, v] = cm[h, :, v, :] / mass[h, v] if mass[h, v] > 0 else cond_p[h, v]
    return ConditionalMeasures(mass, mass_p, cond, cond_p)


def pinsker_check(mu, rho, atoms=None) -> tuple:
    """Variational distance over an algebra and the bound ``sqrt(D(mu || rho) / 2)``.

    ``atoms`` labels every cell with its atom id; ``None`` means the finest
    partition. The bound is ``math.inf`` when the divergence is.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if atoms is None:
        tv = half_l1(mu, rho)
    else:
        labels = np.asarray(atoms).ravel()
        _, inv = np.unique(labels, return_inverse=True)
        tv = half_l1(np.bincount(inv, mu), np.bincount(inv, rho))
    d = rel_entropy(mu, rho)
    return tv, (math.sqrt(d / 2.0) if math.isfinite(d) else math.inf)


@dataclass(frozen=True)
class EntropyReport:
    """Window bound: ``bound_lhs <= bound_rhs`` with ``slack = rhs - lhs``.

    ``tail_lhs`` is the supremum over right-marginal events in ``B_{D*(phi)}``
    (the part of ``A_phi`` seen by ``nu`` and ``nu^P`` when ``mu`` is in
    ``M_S``); ``n_star_lhs`` is the same quantity over ``B_{N*(phi)}``.
    """

    d_full: float
    d_partition: float
    bound_lhs: float
    bound_rhs: float
    slack: float
    window: tuple
    kernel_id: str
    n_phi: tuple = ()
    d_star: tuple = ()
    tail_lhs: float = 0.0
    n_star_lhs: float = 0.0

    def to_dict(self) -> dict:
        return {
            "d_full": self.d_full, "d_partition": self.d_partition,
            "bound_lhs": self.bound_lhs, "bound_rhs": self.bound_rhs, "slack": self.slack,
            "window": list(self.window), "kernel_id": self.kernel_id,
            "n_phi": list(self.n_phi), "d_star": list(self.d_star),
            "tail_lhs": self.tail_lhs, "n_star_lhs": self.n_star_lhs,
        }


def p_h_matrix(kernel: LocalKernel, pp: PartitionPair) -> np.ndarray:
    """``P_H(h, G_v)`` for ``h`` on ``N(phi)`` and ``v`` on ``phi``."""
    return kernel.block_matrix(pp.phi, pp.n_phi)


def window_bound(mu: Coupling, phi: Sequence[int]) -> EntropyReport:
    """Variational distance on ``A_phi`` against ``sqrt((D - D_phi) / 2)``."""
    chain = mu.chain
    kernel = chain.kernel
    k = chain.alphabet
    sites = chain.sites
    pp = PartitionPair.from_window(kernel, phi)
    if np.any(p_h_matrix(kernel, pp) <= 0):
        raise PositivityError(f"P_H has zero entries for window {pp.phi} (A3 violated)")
    mu_p = coupling_push(mu)
    d_full = rel_entropy(mu.table, mu_p.table)
    if not math.isfinite(d_full):
        raise InfiniteEntropyError("D(mu || mu^P) is infinite")
    d_part = partition_entropy(mu, mu_p, pp)
    lhs = half_l1(coarsen_pair(mu.table, sites, pp.n_star, pp.d_star, k),
                  coarsen_pair(mu_p.table, sites, pp.n_star, pp.d_star, k))
    rhs = math.sqrt(max(d_full - d_part, 0.0) / 2.0)
    right, right_p = mu.right, mu_p.right
    tail = half_l1(project(right, sites, pp.d_star, k), project(right_p, sites, pp.d_star, k))
    nstar = half_l1(project(right, sites, pp.n_star, k), project(right_p, sites, pp.n_star, k))
    return EntropyReport(d_full, d_part, lhs, rhs, rhs - lhs, pp.phi, kernel.kernel_id(),
                         pp.n_phi, pp.d_star, tail, nstar)


# -- factorisation of the kernel across N(phi) and D*(phi) ---------------------


@dataclass
class FactorizationReport:
    window: tuple
    n_phi: tuple
    d_star: tuple
    checks: int = 0
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"window": list(self.window), "n_phi": list(self.n_phi), "d_star": list(self.d_star),
                "checks": self.checks, "violations": self.violations, "notes": self.notes}


def factorization_check(chain: FiniteChain, phi: Sequence[int], tol: float = 1e-12) -> FactorizationReport:
    """Check ``P(x, B & C) = P_H(x|N(phi), B) P_0(x|N*(phi), C)`` by enumeration.

    ``B`` runs over cylinders on ``phi`` and ``C`` over all rectangles on
    subsets of ``D*(phi)``. ``P(x, .)`` comes from the enumerated transition
    matrix; ``P_H`` and ``P_0`` are evaluated from restrictions of ``x`` to
    ``N(phi)`` and ``N*(phi)`` alone, so a dependence leak raises a
    violation rather than silently passing.
    """
    kernel = chain.kernel
    k = chain.alphabet
    sites = chain.sites
    pp = PartitionPair.from_window(kernel, phi)
    report = FactorizationReport(pp.phi, pp.n_phi, pp.d_star)
    if not pp.d_star:
        report.notes.append("degenerate: no tail sites")
    states = chain.states
    rectangles = [()]
    for r in range(1, len(pp.d_star) + 1):
        rectangles.extend(itertools.combinations(pp.d_star, r))
    for psi in rectangles:
        joint = tuple(sorted(set(pp.phi) | set(psi)))
        probs = project(np.asarray(chain.transition), sites, joint, k)
        jpos = {z: i for i, z in enumerate(joint)}
        for xi, x in enumerate(states):
            x_map = dict(zip(sites, x.tolist()))
            x_h = {z: x_map[z] for z in pp.n_phi}
            x_0 = {z: x_map[z] for z in pp.n_star}
            for g_idx, g in enumerate(all_digits(len(joint), k)):
                v = [int(g[jpos[z]]) for z in pp.phi]
                w = [int(g[jpos[z]]) for z in psi]
                p_h = cylinder_transition(kernel, x_h, pp.phi, v)
                try:
                    p_0 = cylinder_transition(kernel, x_0, psi, w)
                except WindowError as exc:
                    report.violations.append({"x": x.tolist(), "B": v, "C": [list(psi), w],
                                              "reason": str(exc)})
                    continue
                lhs = probs[xi, g_idx]
                report.checks += 1
                if abs(lhs - p_h * p_0) > tol:
                    report.violations.append({"x": x.tolist(), "B": v, "C": [list(psi), w],
                                              "lhs": lhs, "rhs": p_h * p_0})
    return report


def split_identities(mu: Coupling, pp: PartitionPair) -> dict:
    """Largest deviations in the identities that follow from the factorisation.

    Keys: ``"P(x,C)=P0"``, ``"P(x,B)=PH"`` (marginal forms of the kernel
    split), ``"mu^P cell split"`` (cellwise ``mu^P = P_H * mu^P(A_h x Gamma)``
    on ``A_0`` atoms) and ``"mu^P cell mass"`` (``mu^P(A_h x B) = P_H mu_L(A_h)``).
    """
    chain = mu.chain
    kernel = chain.kernel
    k = chain.alphabet
    sites = chain.sites
    T = np.asarray(chain.transition)
    states = chain.states
    pos = {z: i for i, z in enumerate(sites)}
    ph = p_h_matrix(kernel, pp)
    h_idx = states[:, [pos[z] for z in pp.n_phi]] @ (k ** np.arange(len(pp.n_phi) - 1, -1, -1))
    p_b = project(T, sites, pp.phi, k)
    dev_b = float(np.max(np.abs(p_b - ph[h_idx])))
    p_c = project(T, sites, pp.d_star, k)
    if pp.d_star:
        p0 = kernel.block_matrix(pp.d_star, pp.n_star)
        a_idx = states[:, [pos[z] for z in pp.n_star]] @ (k ** np.arange(len(pp.n_star) - 1, -1, -1))
        dev_c = float(np.max(np.abs(p_c - p0[a_idx])))
    else:
        dev_c = float(np.max(np.abs(p_c - 1.0)))
    mu_p = coupling_push(mu)
    cp = _cells(mu_p.table, sites, pp, k)
    row = cp.sum(axis=2)  # mu^P((A_h x Gamma) & G) over (h, a, c)
    dev_split = float(np.max(np.abs(cp - ph[:, None, :, None] * row[:, :, None, :])))
    mu_l_h = project(mu.left, sites, pp.n_phi, k)
    dev_mass = float(np.max(np.abs(cp.sum(axis=(1, 3)) - ph * mu_l_h[:, None])))
    return {"P(x,C)=P0": dev_c, "P(x,B)=PH": dev_b,
            "mu^P cell split": dev_split, "mu^P cell mass": dev_mass}
