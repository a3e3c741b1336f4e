import numpy as np
import pytest

from pcaldp.chain import build_chain
from pcaldp.lattice import Topology, local_rule, noisy_and, single_site


def random_table(rng, n, kind):
    """A random coupling table of a given flavour on ``n`` states."""
    if kind == "dirichlet":
        return rng.dirichlet(np.full(n * n, 1.0)).reshape(n, n)
    if kind == "sparse":
        return rng.dirichlet(np.full(n * n, 0.1)).reshape(n, n)
    if kind == "symmetric":
        t = rng.dirichlet(np.ones(n * n)).reshape(n, n)
        return (t + t.T) / 2.0
    raise ValueError(kind)


def sanov_chain(rho):
    """Single site whose new symbol ignores the current one and is drawn from ``rho``."""
    rho = np.asarray(rho, dtype=float)
    return build_chain(local_rule(Topology.halfline(1), rho.size, 0, lambda v: rho, name="iid"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def two_state_chain():
    return build_chain(single_site(Topology.halfline(1), 0.3, 0.6))


@pytest.fixture(scope="session")
def torus2():
    return build_chain(noisy_and(Topology.torus(1, 2)))


@pytest.fixture(scope="session")
def halfline8():
    return build_chain(noisy_and(Topology.halfline(8)))
