import itertools
import math

import numpy as np
import pytest
from conftest import random_table, sanov_chain

from pcaldp.chain import build_chain
from pcaldp.entropy import Coupling, PartitionPair, coupling_push, partition_entropy, rel_entropy
from pcaldp.lattice import Topology, local_rule, noisy_and
from pcaldp.oracle import (BudgetError, OracleBudget, UniquenessError, direct_entropy,
                           direct_transition, dual_grid_max, exact_occupation_law, exact_stationary,
                           pair_labels)
from pcaldp.rate import dv_rate_primal, local_tilt

P2 = np.array([[0.7, 0.3], [0.4, 0.6]])


def test_exact_stationary_examples():
    np.testing.assert_allclose(exact_stationary(np.array([[0.7, 0.3], [0.3, 0.7]])), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(exact_stationary(P2), [4 / 7, 3 / 7], atol=1e-15)
    with pytest.raises(UniquenessError, match="uniqueness not guaranteed"):
        exact_stationary(np.eye(3))


def test_exact_stationary_residual(halfline8):
    nu = exact_stationary(halfline8)
    assert np.max(np.abs(nu @ halfline8.transition - nu)) <= 1e-12
    assert nu.sum() == pytest.approx(1.0, abs=1e-12)


def test_occupation_law_examples():
    law = exact_occupation_law(np.eye(2), 1, 7, [1])
    np.testing.assert_array_equal(law, [0] * 7 + [1])
    np.testing.assert_array_equal(exact_occupation_law(P2, 0, 1, [1]), [1.0, 0.0])
    np.testing.assert_array_equal(exact_occupation_law(P2, 1, 1, [1]), [0.0, 1.0])


def test_occupation_law_matches_path_enumeration():
    T = 3
    expected = np.zeros(T + 1)
    for path in itertools.product((0, 1), repeat=T - 1):
        states = (0,) + path
        p = math.prod(P2[a, b] for a, b in zip(states, states[1:]))
        expected[sum(states)] += p
    law = exact_occupation_law(P2, 0, T, [1])
    np.testing.assert_allclose(law, expected, atol=1e-15)
    np.testing.assert_allclose(law, [0.49, 0.33, 0.18, 0.0], atol=1e-15)


def test_occupation_law_mass_and_budget(halfline8):
    law = exact_occupation_law(halfline8, 255, 50, range(128, 256))
    assert abs(law.sum() - 1) <= 1e-10
    with pytest.raises(BudgetError):
        exact_occupation_law(P2, 0, 1001, [1])
    with pytest.raises(BudgetError):
        exact_stationary(halfline8, OracleBudget(max_states=100))
    with pytest.raises(ValueError):
        OracleBudget(max_states=0)


def test_direct_transition_agrees_with_block_product():
    ch = build_chain(noisy_and(Topology.torus(1, 3)))
    np.testing.assert_allclose(direct_transition(ch.kernel), ch.transition, atol=1e-15)


def test_direct_entropy_trivial_and_full_partitions(torus2, rng):
    mu = Coupling(torus2, random_table(rng, 4, "dirichlet"))
    mu_p = coupling_push(mu)
    assert abs(direct_entropy(mu.table, mu_p.table, [0] * 16)) <= 1e-15
    assert direct_entropy(mu.table, mu_p.table) == pytest.approx(rel_entropy(mu.table, mu_p.table), abs=1e-12)
    assert math.isinf(direct_entropy([1, 0], [0, 1]))


def test_direct_entropy_agrees_on_100_couplings(rng):
    worst = 0.0
    for ch in (build_chain(noisy_and(Topology.torus(1, 2))), build_chain(noisy_and(Topology.torus(1, 3)))):
        k = ch.kernel
        for i in range(50):
            mu = Coupling(ch, random_table(rng, ch.n_states, ("dirichlet", "sparse", "symmetric")[i % 3]))
            mu_p = coupling_push(mu)
            for phi in [(0,), (0, 1)]:
                pp = PartitionPair.from_window(k, phi)
                ref = direct_entropy(mu.table, mu_p.table, pair_labels(k, pp.n_phi, pp.phi))
                worst = max(worst, abs(partition_entropy(mu, mu_p, pp) - ref))
    assert worst <= 1e-10


def test_dual_grid_examples(two_state_chain):
    pi = exact_stationary(two_state_chain)
    assert dual_grid_max(two_state_chain, pi) <= 1e-6
    assert dv_rate_primal(two_state_chain, pi).value <= 1e-8
    assert dual_grid_max(sanov_chain([0.5, 0.5]), [0.75, 0.25]) >= 0.1307


def test_dual_grid_below_primal_on_random_three_state_chains():
    rng = np.random.default_rng(21)
    for _ in range(10):
        rows = rng.dirichlet(np.ones(3), size=3)
        nu = rng.dirichlet(np.ones(3))
        bound = dual_grid_max(rows, nu, restarts=2, seed=int(rng.integers(1 << 31)))
        ch = build_chain(local_rule(Topology.halfline(1), 3, 0, lambda v: rows[v[0]]))
        primal = dv_rate_primal(ch, nu).value
        assert bound <= primal + 1e-9
        assert primal - bound <= 1e-4


def test_dual_grid_quasi_newton_branch(halfline8):
    nu = local_tilt(halfline8, exact_stationary(halfline8), 0, 1.0)
    primal = dv_rate_primal(halfline8, nu).value
    bound = dual_grid_max(halfline8, nu, restarts=1)
    assert bound <= primal + 1e-9
    assert primal - bound <= 1e-4


def test_dual_grid_is_seeded(two_state_chain):
    a = dual_grid_max(two_state_chain, [0.6, 0.4], seed=3)
    assert a == dual_grid_max(two_state_chain, [0.6, 0.4], seed=3)
