"""Measures on the configuration space, represented by cylinder marginals on finite windows."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import (ROW_TOL, SUM_TOL, LocalKernel, Topology, WindowError,
                      assignment_index, assignments)


class ProbabilityError(ValueError):
    """A table that should be a probability vector is not one."""


def project(probs: np.ndarray, window: Sequence[int], keep: Sequence[int], k: int) -> np.ndarray:
    """Marginal of a canonical table on ``window`` onto the sub-window ``keep``.

    Extra leading axes of ``probs`` (before the last) are carried along, so a
    batch of tables can be projected at once.
    """
    window = tuple(window)
    keep = tuple(sorted(keep))
    missing = set(keep) - set(window)
    if missing:
        raise WindowError("window does not contain the target sites", missing)
    m = len(window)
    lead = probs.shape[:-1]
    arr = probs.reshape(lead + (k,) * m)
    drop = tuple(len(lead) + i for i, z in enumerate(window) if z not in keep)
    if drop:
        arr = arr.sum(axis=drop)
    return arr.reshape(lead + (k ** len(keep),))


def coarsen_pair(table: np.ndarray, sites: Sequence[int], left: Sequence[int],
                 right: Sequence[int], k: int) -> np.ndarray:
    """Project a joint table on ``S^sites x S^sites`` to ``S^left x S^right``."""
    m = len(sites)
    arr = table.reshape((k,) * (2 * m))
    left, right = set(left), set(right)
    drop = [i for i, z in enumerate(sites) if z not in left]
    drop += [m + i for i, z in enumerate(sites) if z not in right]
    if drop:
        arr = arr.sum(axis=tuple(drop))
    return arr.reshape(k ** len(left), k ** len(right))


def _check_probs(probs: np.ndarray, tol: float, what: str) -> None:
    if np.any(probs < 0):
        raise ProbabilityError(f"{what} has negative entries")
    total = probs.sum()
    if abs(total - 1.0) > tol:
        raise ProbabilityError(f"{what} sums to {total!r}, not 1 (tolerance {tol})")


@dataclass(frozen=True, eq=False)
class CylinderMeasure:
    """Probabilities of the cylinder sets ``G_v`` for ``v`` in ``S^window``."""

    window: tuple
    probs: np.ndarray
    alphabet: int = 2

    def __post_init__(self):
        window = tuple(int(z) for z in self.window)
        if list(window) != sorted(set(window)):
            raise ValueError(f"window {self.window} is not canonical")
        probs = np.asarray(self.probs, dtype=float).copy()
        if probs.shape != (self.alphabet ** len(window),):
            raise ProbabilityError(f"expected {self.alphabet ** len(window)} probabilities, got {probs.shape}")
        _check_probs(probs, SUM_TOL, "cylinder measure")
        probs.setflags(write=False)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "probs", probs)

    def __call__(self, v) -> float:
        """Probability of the cylinder with assignment ``v`` (window-aligned)."""
        return float(self.probs[assignment_index(v, self.alphabet)])

    def items(self):
        return zip(assignments(self.window, self.alphabet), self.probs)


def uniform_measure(window: Sequence[int], k: int = 2) -> CylinderMeasure:
    n = k ** len(window)
    return CylinderMeasure(tuple(window), np.full(n, 1.0 / n), k)


def point_mass(window: Sequence[int], values: Sequence[int], k: int = 2) -> CylinderMeasure:
    probs = np.zeros(k ** len(window))
    probs[assignment_index(values, k)] = 1.0
    return CylinderMeasure(tuple(window), probs, k)


def product_measure(window: Sequence[int], marginals) -> CylinderMeasure:
    """Product of per-site distributions; a single distribution is repeated at every site."""
    window = tuple(window)
    marginals = np.asarray(marginals, dtype=float)
    if marginals.ndim == 1:
        marginals = np.tile(marginals, (len(window), 1))
    probs = np.ones(1)
    for row in marginals:
        probs = np.outer(probs, row).ravel()
    return CylinderMeasure(window, probs, marginals.shape[1])


def marginalize(mu: CylinderMeasure, psi: Sequence[int]) -> CylinderMeasure:
    psi = tuple(sorted(psi))
    if not set(psi) <= set(mu.window):
        raise WindowError("psi is not a sub-window of the measure's window", set(psi) - set(mu.window))
    return CylinderMeasure(psi, project(mu.probs, mu.window, psi, mu.alphabet), mu.alphabet)


def push_kernel(nu: CylinderMeasure, kernel: LocalKernel, phi: Sequence[int]) -> CylinderMeasure:
    """One-step image ``nu^P`` restricted to ``phi``.

    Only the marginal of ``nu`` on ``N(phi)`` matters, which is why a finite
    window suffices.
    """
    phi = tuple(sorted(phi))
    n_phi = kernel.neighborhood_closure(phi)
    if not set(n_phi) <= set(nu.window):
        raise WindowError("measure window does not contain N(phi)", set(n_phi) - set(nu.window))
    h_probs = project(nu.probs, nu.window, n_phi, nu.alphabet)
    return CylinderMeasure(phi, h_probs @ kernel.block_matrix(phi, n_phi), nu.alphabet)


def shifted_window(psi: Sequence[int], n: int) -> tuple:
    return tuple(z + n for z in psi)


def shift_measure(mu: CylinderMeasure, n: int, psi: Sequence[int],
                  topology: Topology | None = None) -> CylinderMeasure:
    """Marginal on ``psi`` of the left-shifted measure ``mu_n``.

    ``mu_n(G_u) = mu(G_w)`` with ``u`` the relabelling of ``w`` from
    ``psi + n`` to ``psi``; canonical order is translation invariant, so the
    probability vector is the marginal on ``psi + n`` itself.
    """
    if topology is not None and topology.kind != "halfline":
        raise ValueError("one-sided shifts are defined on the half-line only")
    psi = tuple(sorted(psi))
    if n < 0 or any(z < 0 for z in psi):
        raise ValueError("shifts and windows live on the nonnegative half-line")
    source = shifted_window(psi, n)
    if not set(source) <= set(mu.window):
        raise WindowError("measure window does not contain psi + n", set(source) - set(mu.window))
    return CylinderMeasure(psi, project(mu.probs, mu.window, source, mu.alphabet), mu.alphabet)


@dataclass(frozen=True, eq=False)
class ShiftFamily:
    """The shifted measures ``mu_n`` of a base measure, all restricted to one window ``psi``."""

    base: CylinderMeasure
    psi: tuple
    shifts: tuple = field(default=())

    @classmethod
    def build(cls, base: CylinderMeasure, psi: Sequence[int], ns: Sequence[int]) -> "ShiftFamily":
        psi = tuple(sorted(psi))
        return cls(base, psi, tuple(shift_measure(base, n, psi) for n in ns))


def half_l1(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def subalgebra_sup_distance(mu: CylinderMeasure, nu: CylinderMeasure, psi: Sequence[int]) -> float:
    """``sup |mu(A) - nu(A)|`` over events generated by the sites in ``psi``.

    The supremum over a finite algebra is attained at the union of atoms
    where ``mu`` exceeds ``nu``, hence half the L1 distance of the marginals.
    """
    if mu.window != nu.window or mu.alphabet != nu.alphabet:
        raise ValueError("measures must share a window")
    psi = tuple(sorted(psi))
    k = mu.alphabet
    return half_l1(project(mu.probs, mu.window, psi, k), project(nu.probs, nu.window, psi, k))


@dataclass(frozen=True)
class ConsistencyIssue:
    first: int
    second: int
    sites: tuple
    max_abs_diff: float


def check_consistency(family: Sequence[CylinderMeasure], tol: float = SUM_TOL) -> list:
    """Pairs of measures whose marginals on their common sites disagree by more than ``tol``."""
    issues = []
    for i in range(len(family)):
        for j in range(i + 1, len(family)):
            a, b = family[i], family[j]
            common = tuple(sorted(set(a.window) & set(b.window)))
            if not common:
                continue
            pa = project(a.probs, a.window, common, a.alphabet)
            pb = project(b.probs, b.window, common, b.alphabet)
            diff = float(np.max(np.abs(pa - pb)))
            if diff > tol:
                issues.append(ConsistencyIssue(i, j, common, diff))
    return issues


def check_exact_probs(probs: np.ndarray, what: str = "probabilities") -> None:
    """Strict check used for user-supplied tables."""
    _check_probs(np.asarray(probs, dtype=float), ROW_TOL, what)
