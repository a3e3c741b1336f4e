"""Full enumeration of a truncated PCA as a finite Markov chain."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .lattice import SUM_TOL, LocalKernel, all_digits

DEFAULT_MAX_STATES = 4096


class StateCapError(ValueError):
    def __init__(self, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(f"truncation has {required} states, above the cap of {cap}; "
                         f"raise it to at least {required} (PCALDP_MAX_STATES or --cap)")


def max_states(cap: int | None = None) -> int:
    if cap is not None:
        return int(cap)
    return int(os.environ.get("PCALDP_MAX_STATES", DEFAULT_MAX_STATES))


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Enumerated states of the truncation and the synchronous transition matrix."""

    kernel: LocalKernel
    transition: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def sites(self) -> tuple:
        return self.kernel.sites

    @property
    def alphabet(self) -> int:
        return self.kernel.alphabet

    @property
    def states(self) -> np.ndarray:
        """``(n_states, n_sites)`` array of configurations in canonical order."""
        return all_digits(self.kernel.n_sites, self.kernel.alphabet)

    def is_positive(self) -> bool:
        return bool(np.all(self.transition > 0))


def build_chain(kernel: LocalKernel, cap: int | None = None) -> FiniteChain:
    """Transition matrix ``T[x, y] = prod_z P_z(x|N(z), y(z))`` over the whole truncation."""
    n = kernel.n_states
    limit = max_states(cap)
    if n > limit:
        raise StateCapError(n, limit)
    sites = kernel.sites
    T = kernel.block_matrix(sites, sites)
    err = np.max(np.abs(T.sum(axis=1) - 1.0))
    if err > SUM_TOL:
        raise ValueError(f"transition rows deviate from 1 by {err:.3g}; validate the kernel")
    T.setflags(write=False)
    return FiniteChain(kernel, T)


def stationary_distribution(chain: FiniteChain, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Stationary law by power iteration from the uniform distribution.

    For chains with a zero entry the limit need not be unique; the oracle
    module checks uniqueness, this routine does not.
    """
    P = chain.transition
    nu = np.full(chain.n_states, 1.0 / chain.n_states)
    for _ in range(max_iter):
        nxt = nu @ P
        if np.abs(nxt - nu).sum() < tol:
            return nxt / nxt.sum()
        nu = nxt
    raise RuntimeError(f"power iteration did not reach {tol:g} in {max_iter} steps")
