"""Sites, windows and local transition kernels of a PCA on a finite truncation.

Sites are integer indices into the truncation. On a torus of dimension ``d``
the index is the row-major (lexicographic) flattening of the coordinate
tuple, so sorting indices is the same as sorting coordinates. A window is a
sorted tuple of distinct sites, and assignments on a window are enumerated
site-major, symbol-minor: the first site of the window is the most
significant digit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

ROW_TOL = 1e-12
SUM_TOL = 1e-10

Window = tuple  # sorted tuple of int sites


class KernelError(ValueError):
    pass


class MalformedKernelError(KernelError):
    """The kernel's tables are structurally incomplete (missing rows, bad shapes)."""


class WindowError(ValueError):
    """A window does not contain the sites an operation needs."""

    def __init__(self, message: str, missing: Iterable[int] = ()):
        self.missing = tuple(sorted(missing))
        if self.missing:
            message = f"{message}: missing sites {list(self.missing)}"
        super().__init__(message)


@dataclass(frozen=True)
class Topology:
    """Finite truncation of the site set: a ``d``-torus of side ``L`` or the half-line ``{0..L-1}``."""

    kind: str
    L: int
    d: int = 1

    def __post_init__(self):
        if self.kind not in ("torus", "halfline"):
            raise ValueError(f"unknown topology kind {self.kind!r}")
        if self.L < 1 or self.d < 1:
            raise ValueError("topology needs L >= 1 and d >= 1")
        if self.kind == "halfline" and self.d != 1:
            raise ValueError("halfline topology is one-dimensional")

    @classmethod
    def torus(cls, d: int, L: int) -> "Topology":
        return cls("torus", L, d)

    @classmethod
    def halfline(cls, L: int) -> "Topology":
        return cls("halfline", L, 1)

    @property
    def n_sites(self) -> int:
        return self.L ** self.d

    @property
    def sites(self) -> Window:
        return tuple(range(self.n_sites))

    def coords(self, site: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(site, (self.L,) * self.d))

    def site_at(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), (self.L,) * self.d))

    def translate(self, site: int, offset) -> int | None:
        """Site ``site + offset``; ``None`` when it leaves a half-line truncation."""
        if isinstance(offset, (int, np.integer)):
            offset = (int(offset),) + (0,) * (self.d - 1)
        c = self.coords(site)
        moved = [a + b for a, b in zip(c, offset)]
        if self.kind == "torus":
            return self.site_at([m % self.L for m in moved])
        if not 0 <= moved[0] < self.L:
            return None
        return moved[0]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "L": self.L}
        if self.kind == "torus":
            out["d"] = self.d
        return out


def make_window(topology: Topology, sites: Iterable[int]) -> Window:
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise ValueError(f"duplicate sites in window {sites}")
    bad = [s for s in sites if not 0 <= s < topology.n_sites]
    if bad:
        raise ValueError(f"sites {bad} are not in {topology}")
    return tuple(sorted(sites))


def assignments(window: Sequence[int], k: int) -> Iterator[tuple]:
    """All symbol assignments on ``window`` in canonical order."""
    return itertools.product(range(k), repeat=len(window))


def all_digits(m: int, k: int) -> np.ndarray:
    """Array of shape ``(k**m, m)``; row ``i`` is the ``i``-th assignment in canonical order."""
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((k,) * m).reshape(m, -1)
    return grids.T.astype(np.int64)


def place_values(m: int, k: int) -> np.ndarray:
    return k ** np.arange(m - 1, -1, -1, dtype=np.int64)


def assignment_index(values: Sequence[int], k: int) -> int:
    idx = 0
    for s in values:
        idx = idx * k + int(s)
    return idx


def as_assignment(x, window: Sequence[int] | None = None) -> dict:
    """Normalise a mapping or a window-aligned sequence to ``{site: symbol}``."""
    if isinstance(x, Mapping):
        return {int(z): int(s) for z, s in x.items()}
    if window is None:
        raise TypeError("a sequence assignment needs its window")
    if len(x) != len(window):
        raise ValueError("assignment length does not match window")
    return {int(z): int(s) for z, s in zip(window, x)}


@dataclass(frozen=True, eq=False)
class LocalKernel:
    """Synchronous local kernel: one table ``P_z(h, s)`` per site.

    ``tables[z]`` has shape ``(k**len(neighborhoods[z]), k)``; row ``h`` is
    the distribution of the new symbol at ``z`` given the canonical index of
    the assignment on ``neighborhoods[z]``. Construction does not check
    stochasticity; :func:`validate` reports that.
    """

    alphabet: int
    topology: Topology
    neighborhoods: tuple
    tables: tuple
    shift_invariant_radius: int | None = None
    name: str = "explicit"

    @property
    def n_sites(self) -> int:
        return self.topology.n_sites

    @property
    def n_states(self) -> int:
        return self.alphabet ** self.n_sites

    @property
    def sites(self) -> Window:
        return self.topology.sites

    def neighborhood(self, z: int) -> Window:
        return self.neighborhoods[z]

    def prob(self, z: int, h: Sequence[int], s: int) -> float:
        return float(self.tables[z][assignment_index(h, self.alphabet), s])

    def dependents(self, z: int) -> Window:
        """``D(z)``: sites whose neighbourhood contains ``z``."""
        return tuple(zp for zp in self.sites if z in self.neighborhoods[zp])

    def neighborhood_closure(self, phi: Iterable[int]) -> Window:
        phi = list(phi)
        if not phi:
            raise ValueError("window must be nonempty")
        out = set()
        for z in phi:
            out.update(self.neighborhoods[z])
        return tuple(sorted(out))

    def dependent_closure(self, phi: Iterable[int]) -> Window:
        out = set()
        for y in self.neighborhood_closure(phi):
            out.update(self.dependents(y))
        return tuple(sorted(out))

    def complement(self, window: Iterable[int]) -> Window:
        window = set(window)
        return tuple(z for z in self.sites if z not in window)

    def is_clipped(self, z: int) -> bool:
        """True when ``N(z)`` was cut short by the right edge of a half-line."""
        r0 = self.shift_invariant_radius
        if self.topology.kind != "halfline" or r0 is None:
            return False
        return z + r0 > self.topology.L - 1

    def kernel_id(self) -> str:
        return f"{self.name}@{self.topology.kind}(L={self.topology.L},d={self.topology.d})"

    def block_matrix(self, phi: Sequence[int], source: Sequence[int]) -> np.ndarray:
        """Matrix ``M[h, v] = prod_{z in phi} P_z(h|N(z), v(z))``.

        ``h`` runs over assignments on ``source`` (which must contain
        ``N(phi)``) and ``v`` over assignments on ``phi``, both canonical.
        """
        source = tuple(source)
        k = self.alphabet
        pos = {z: i for i, z in enumerate(source)}
        if phi:
            missing = set(self.neighborhood_closure(phi)) - set(source)
            if missing:
                raise WindowError("source window does not cover N(phi)", missing)
        digits = all_digits(len(source), k)
        out = np.ones((digits.shape[0], 1))
        for z in phi:
            nb = self.neighborhoods[z]
            cols = [pos[y] for y in nb]
            h_idx = digits[:, cols] @ place_values(len(nb), k)
            factor = self.tables[z][h_idx]
            out = (out[:, :, None] * factor[:, None, :]).reshape(digits.shape[0], -1)
        return out


def cylinder_transition(kernel: LocalKernel, x, phi: Sequence[int], v) -> float:
    """``P(x, G_v) = prod_{z in phi} P_z(x|N(z), v(z))`` for one configuration ``x``.

    ``x`` is a ``{site: symbol}`` mapping that must cover ``N(phi)``;
    ``v`` is a mapping or a sequence aligned with ``phi``.
    """
    x = as_assignment(x)
    v = as_assignment(v, phi)
    needed = kernel.neighborhood_closure(phi) if phi else ()
    missing = [y for y in needed if y not in x]
    if missing:
        raise WindowError("configuration does not cover N(phi)", missing)
    p = 1.0
    for z in phi:
        h = [x[y] for y in kernel.neighborhoods[z]]
        p *= kernel.prob(z, h, v[z])
    return p


def shift_config(x, n: int, topology: Topology) -> dict:
    """Left shift of a half-line assignment: ``u(z) = x(z + n)``.

    A negative ``n`` applies the inverse relabelling.
    """
    if topology.kind != "halfline":
        raise ValueError("one-sided shifts are defined on the half-line only")
    x = as_assignment(x)
    out = {z - n: s for z, s in x.items()}
    if any(z < 0 or z >= topology.L for z in out):
        raise WindowError("shifted window leaves the truncation", [z for z in out if z < 0 or z >= topology.L])
    return dict(sorted(out.items()))


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    assumption: str
    site: int
    h: tuple | None = None
    s: int | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {"assumption": self.assumption, "site": self.site,
                "h": None if self.h is None else list(self.h), "s": self.s,
                "message": self.message}


def _check_structure(kernel: LocalKernel) -> None:
    n = kernel.n_sites
    k = kernel.alphabet
    if k < 1:
        raise MalformedKernelError("alphabet size must be >= 1")
    if len(kernel.neighborhoods) != n or len(kernel.tables) != n:
        raise MalformedKernelError(f"expected {n} neighbourhoods and tables")
    for z in range(n):
        nb = kernel.neighborhoods[z]
        if any(not 0 <= y < n for y in nb) or list(nb) != sorted(set(nb)):
            raise MalformedKernelError(f"site {z}: neighbourhood {nb} is not a canonical window")
        table = np.asarray(kernel.tables[z])
        expected = (k ** len(nb), k)
        if table.shape != expected:
            raise MalformedKernelError(
                f"site {z}: table shape {table.shape}, expected {expected} (missing rows?)")
        if not np.all(np.isfinite(table)):
            raise MalformedKernelError(f"site {z}: non-finite table entries")


def _shift_violations(kernel: LocalKernel) -> list:
    """A5 (torus) / A6 (half-line) checks against site 0's table."""
    topo = kernel.topology
    r0 = kernel.shift_invariant_radius
    k = kernel.alphabet
    tag = "A5" if topo.kind == "torus" else "A6"
    out = []
    offsets = list(itertools.product(range(r0 + 1), repeat=topo.d))
    ref_nb = kernel.neighborhoods[0]
    for z in kernel.sites:
        moved = [topo.translate(z, off) for off in offsets]
        expected_nb = tuple(sorted({m for m in moved if m is not None}))
        if kernel.neighborhoods[z] != expected_nb:
            out.append(Violation(tag, z, message=f"N({z})={kernel.neighborhoods[z]}, expected {expected_nb}"))
            continue
        if kernel.is_clipped(z) or z == 0:
            continue
        # translate each row of table z back to site 0 and compare
        shift = topo.coords(z)
        ref_pos = {y: i for i, y in enumerate(ref_nb)}
        nb = kernel.neighborhoods[z]
        for h in assignments(nb, k):
            h0 = [0] * len(ref_nb)
            ok = True
            for y, s in zip(nb, h):
                back = topo.translate(y, tuple(-c for c in shift))
                if back is None or back not in ref_pos:
                    ok = False
                    break
                h0[ref_pos[back]] = s
            if not ok:
                out.append(Violation(tag, z, tuple(h), message="neighbourhood is not a translate of N(0)"))
                break
            row = kernel.tables[z][assignment_index(h, k)]
            ref = kernel.tables[0][assignment_index(h0, k)]
            if np.max(np.abs(row - ref)) > ROW_TOL:
                out.append(Violation(tag, z, tuple(h), message="table is not the translate of site 0's table"))
    return out


def validate(kernel: LocalKernel, require_positivity: bool = False) -> list:
    """List the violated assumptions; an empty list means the kernel is admissible.

    Raises :class:`MalformedKernelError` for structurally broken kernels.
    A1 holds by construction (one independent table per site) and A4 holds on
    every finite truncation, so neither produces entries.
    """
    _check_structure(kernel)
    k = kernel.alphabet
    out = []
    for z in kernel.sites:
        nb = kernel.neighborhoods[z]
        table = np.asarray(kernel.tables[z])
        if z not in nb:
            out.append(Violation("A2", z, message=f"site {z} is not in its own neighbourhood"))
        for h_idx, h in enumerate(assignments(nb, k)):
            row = table[h_idx]
            if np.any(row < 0) or abs(row.sum() - 1.0) > ROW_TOL:
                out.append(Violation("A2", z, tuple(h), message=f"row sums to {row.sum():.15g}"))
            if require_positivity:
                for s in np.flatnonzero(row <= 0):
                    out.append(Violation("A3", z, tuple(h), int(s), "zero transition probability"))
    if kernel.shift_invariant_radius is not None:
        out.extend(_shift_violations(kernel))
    return out


# -- builtin kernels ----------------------------------------------------------


def local_rule(topology: Topology, alphabet: int, radius: int,
               rule: Callable[[tuple], Sequence[float]], *, boundary: int = 0,
               name: str = "local_rule") -> LocalKernel:
    """Translation-invariant kernel with ``N(z) = z + {0..radius}^d``.

    ``rule`` maps the neighbourhood values in offset order to a distribution
    over the alphabet. On a half-line, offsets beyond the right edge are
    dropped from ``N(z)`` and the rule sees ``boundary`` in their place.
    """
    offsets = list(itertools.product(range(radius + 1), repeat=topology.d))
    nbs, tables = [], []
    for z in topology.sites:
        moved = [topology.translate(z, off) for off in offsets]
        nb = tuple(sorted({m for m in moved if m is not None}))
        pos = {y: i for i, y in enumerate(nb)}
        rows = []
        for h in assignments(nb, alphabet):
            values = tuple(boundary if m is None else h[pos[m]] for m in moved)
            rows.append(np.asarray(rule(values), dtype=float))
        nbs.append(nb)
        tables.append(np.vstack(rows))
    return LocalKernel(alphabet, topology, tuple(nbs), tuple(tables), radius, name)


def noisy_and(topology: Topology, base: float = 0.1, gain: float = 0.8,
              radius: int = 1, boundary: int = 0) -> LocalKernel:
    """Binary kernel with ``P(1 | h) = base + gain * prod h`` over the neighbourhood."""
    def rule(values):
        p1 = base + gain * float(np.prod(values))
        return (1.0 - p1, p1)
    return local_rule(topology, 2, radius, rule, boundary=boundary,
                      name=f"noisy_and(base={base},gain={gain},radius={radius})")


def single_site(topology: Topology, p01: float, p11: float) -> LocalKernel:
    """Independent binary flips: ``P(1 | 0) = p01`` and ``P(1 | 1) = p11`` at every site."""
    table = {0: (1.0 - p01, p01), 1: (1.0 - p11, p11)}
    return local_rule(topology, 2, 0, lambda v: table[v[0]],
                      name=f"single_site(p01={p01},p11={p11})")


def uniform_kernel(topology: Topology, alphabet: int = 2) -> LocalKernel:
    return local_rule(topology, alphabet, 0, lambda v: np.full(alphabet, 1.0 / alphabet),
                      name="uniform")


def identity_kernel(topology: Topology, alphabet: int = 2) -> LocalKernel:
    return local_rule(topology, alphabet, 0, lambda v: np.eye(alphabet)[v[0]], name="identity")


BUILTINS = {
    "noisy_and": noisy_and,
    "single_site": single_site,
    "uniform": uniform_kernel,
    "identity": identity_kernel,
}
