import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcaldp.lattice import (Topology, WindowError, assignments, identity_kernel, noisy_and,
                            uniform_kernel)
from pcaldp.measures import (CylinderMeasure, ProbabilityError, ShiftFamily, check_consistency,
                             marginalize, point_mass, product_measure, project, push_kernel,
                             shift_measure, subalgebra_sup_distance, uniform_measure)


def random_measure(rng, window, k=2):
    return CylinderMeasure(tuple(window), rng.dirichlet(np.ones(k ** len(window))), k)


def test_marginalize_examples():
    mu = product_measure((0, 1), [[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(marginalize(mu, (0,)).probs, [0.2, 0.8], atol=1e-15)
    pm = point_mass((0, 1, 2), (1, 0, 1))
    np.testing.assert_array_equal(marginalize(pm, (0, 2)).probs, point_mass((0, 2), (1, 1)).probs)
    np.testing.assert_allclose(marginalize(uniform_measure((0, 1, 2), 3), (2,)).probs, [1 / 3] * 3)
    with pytest.raises(WindowError):
        marginalize(mu, (0, 5))


def test_measure_rejects_bad_tables():
    with pytest.raises(ProbabilityError):
        CylinderMeasure((0,), [0.5, 0.6])
    with pytest.raises(ProbabilityError):
        CylinderMeasure((0,), [1.2, -0.2])
    with pytest.raises(ValueError):
        CylinderMeasure((1, 0), [0.25] * 4)


def test_canonical_order_first_site_most_significant():
    mu = product_measure((3, 5), [[1.0, 0.0], [0.0, 1.0]])
    assert mu((0, 1)) == 1.0
    assert list(assignments((3, 5), 2)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_push_examples(rng):
    top = Topology.halfline(4)
    nu = random_measure(rng, (0, 1, 2, 3))
    np.testing.assert_allclose(push_kernel(nu, uniform_kernel(top), (1, 2)).probs, [0.25] * 4)
    np.testing.assert_allclose(push_kernel(nu, identity_kernel(top), (1, 2)).probs,
                               marginalize(nu, (1, 2)).probs, atol=1e-15)
    t2 = noisy_and(Topology.torus(1, 2))
    out = push_kernel(point_mass((0, 1), (1, 1)), t2, (0, 1))
    np.testing.assert_allclose(out.probs, [0.01, 0.09, 0.09, 0.81], atol=1e-15)


def test_push_needs_the_neighbourhood():
    k = noisy_and(Topology.halfline(6))
    with pytest.raises(WindowError) as err:
        push_kernel(uniform_measure((0, 1)), k, (0, 1))
    assert err.value.missing == (2,)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.sets(st.integers(0, 4), min_size=1, max_size=3))
def test_push_commutes_with_marginalize(seed, phi):
    rng = np.random.default_rng(seed)
    k = noisy_and(Topology.halfline(6))
    nu = random_measure(rng, range(6))
    phi = tuple(sorted(phi))
    small = marginalize(nu, k.neighborhood_closure(phi))
    a = push_kernel(nu, k, phi).probs
    b = push_kernel(small, k, phi).probs
    assert np.max(np.abs(a - b)) <= 1e-10
    sub = phi[:1]
    c = marginalize(push_kernel(nu, k, phi), sub).probs
    assert np.max(np.abs(c - push_kernel(nu, k, sub).probs)) <= 1e-10


def test_shift_measure_examples(rng):
    ones = point_mass(range(6), (1,) * 6)
    np.testing.assert_array_equal(shift_measure(ones, 2, (0, 1, 2, 3)).probs,
                                  point_mass(range(4), (1,) * 4).probs)
    nu = random_measure(rng, range(5))
    np.testing.assert_array_equal(shift_measure(nu, 0, (1, 3)).probs, marginalize(nu, (1, 3)).probs)
    bern = product_measure(range(7), [0.3, 0.7])
    for n in range(4):
        np.testing.assert_allclose(shift_measure(bern, n, (0, 1, 3)).probs,
                                   product_measure((0, 1, 3), [0.3, 0.7]).probs, atol=1e-15)
    with pytest.raises(WindowError):
        shift_measure(nu, 3, (0, 1, 2))
    with pytest.raises(ValueError):
        shift_measure(nu, 1, (0,), Topology.torus(1, 5))


def test_shift_measure_is_relabelled_cylinder_mass(rng):
    nu = random_measure(rng, range(6))
    psi = (0, 2)
    for n in range(4):
        shifted = shift_measure(nu, n, psi)
        for u in assignments(psi, 2):
            direct = sum(p for x, p in nu.items() if (x[psi[0] + n], x[psi[1] + n]) == u)
            assert abs(shifted(u) - direct) <= 1e-12


def test_pushforward_commutes_with_shifts(rng):
    k = noisy_and(Topology.halfline(8))
    mu = random_measure(rng, range(8))
    for psi in [(0,), (0, 1), (1, 3)]:
        for n in range(0, 5):
            if any(k.is_clipped(z + n) for z in psi):
                continue
            lhs = push_kernel(shift_measure(mu, n, k.neighborhood_closure(psi)), k, psi)
            psi_n = tuple(z + n for z in psi)
            rhs = shift_measure(push_kernel(mu, k, psi_n), n, psi)
            assert np.max(np.abs(lhs.probs - rhs.probs)) <= 1e-12


def test_shifted_cylinder_gap_below_window_distance(rng):
    k = noisy_and(Topology.halfline(8))
    mu = random_measure(rng, range(8))
    for psi in [(0, 1), (0, 2)]:
        for n in range(5):
            psi_n = tuple(z + n for z in psi)
            pushed = push_kernel(mu, k, psi_n)
            bound = subalgebra_sup_distance(pushed, marginalize(mu, psi_n), psi_n)
            mu_n = shift_measure(mu, n, psi).probs
            mu_p_n = shift_measure(pushed, n, psi).probs
            assert np.all(np.abs(mu_p_n - mu_n) <= bound + 1e-15)


def test_sup_distance_examples():
    two = (0, 1)
    u = uniform_measure(two)
    assert subalgebra_sup_distance(u, u, two) == 0.0
    assert subalgebra_sup_distance(point_mass(two, (0, 1)), point_mass(two, (1, 1)), two) == 1.0
    # Bernoulli(0.75) on both sites: (|0.5625-0.25| + 2|0.1875-0.25| + |0.0625-0.25|) / 2
    b = product_measure(two, [0.25, 0.75])
    assert subalgebra_sup_distance(b, u, two) == pytest.approx(0.3125, abs=1e-15)
    with pytest.raises(ValueError):
        subalgebra_sup_distance(u, uniform_measure((0, 2)), (0,))


def test_sup_distance_equals_max_over_all_events(rng):
    a, b = random_measure(rng, (0, 1)), random_measure(rng, (0, 1))
    best = 0.0
    for r in range(5):
        for event in itertools.combinations(range(4), r):
            best = max(best, abs(a.probs[list(event)].sum() - b.probs[list(event)].sum()))
    assert subalgebra_sup_distance(a, b, (0, 1)) == pytest.approx(best, abs=1e-15)


@given(st.integers(0, 2 ** 32 - 1))
def test_sup_distance_metric_and_monotone(seed):
    rng = np.random.default_rng(seed)
    w = (0, 1, 2)
    a, b, c = (random_measure(rng, w) for _ in range(3))
    d = subalgebra_sup_distance
    assert d(a, b, w) == pytest.approx(d(b, a, w), abs=1e-15)
    assert d(a, c, w) <= d(a, b, w) + d(b, c, w) + 1e-15
    assert d(a, b, (0,)) <= d(a, b, (0, 1)) + 1e-15 <= d(a, b, w) + 2e-15


def test_consistency_examples(rng):
    base = random_measure(rng, range(4))
    family = [marginalize(base, w) for w in [(0,), (0, 1), (1, 2, 3), range(4)]]
    assert check_consistency(family) == []
    assert check_consistency([uniform_measure((0,)), uniform_measure((0, 1))]) == []
    bad = family[1].probs.copy()
    bad[0] += 0.01
    bad[1] -= 0.01
    family[1] = CylinderMeasure((0, 1), bad)
    issues = check_consistency(family)
    # the rebalancing keeps the site-0 marginal, so only pairs sharing site 1 break
    assert {(i.first, i.second) for i in issues} == {(1, 2), (1, 3)}
    assert all(1 in i.sites for i in issues)


def test_shift_family_matches_shift_measure(rng):
    base = random_measure(rng, range(6))
    fam = ShiftFamily.build(base, (0, 1), range(5))
    for n, m in enumerate(fam.shifts):
        np.testing.assert_array_equal(m.probs, project(base.probs, base.window, (n, n + 1), 2))
