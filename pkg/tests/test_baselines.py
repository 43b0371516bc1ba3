"""Baselines against a from-scratch enumerator, hand traces, and the
feasibility/dominance invariants."""

import itertools
import math

import numpy as np
import pytest

from cfassign import baselines as bl


def independent_best(g, u_cap, l_min, sigma2):
    """Brute-force reference written without any project helpers."""
    k_users, n_aps = g.shape
    subs = list(itertools.combinations(range(k_users), u_cap))
    best_rate = -math.inf
    best_s = None
    count = 0
    for choice in itertools.product(subs, repeat=n_aps):
        count += 1
        power = [0.0] * k_users
        counts = [0] * k_users
        for n, sub in enumerate(choice):
            for k in sub:
                power[k] += g[k][n]
                counts[k] += 1
        if any(c < l_min for c in counts):
            continue
        rate = sum(math.log2(1.0 + p / sigma2) for p in power)
        if rate > best_rate:
            best_rate = rate
            best_s = np.zeros((k_users, n_aps))
            for n, sub in enumerate(choice):
                for k in sub:
                    best_s[k, n] = 1.0
    return best_rate, best_s, count


def test_check_feasible():
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert bl.check_feasible(s, 2, 2)
    assert not bl.check_feasible(s, 1, 1)
    assert not bl.check_feasible(np.array([[0.5, 1.0], [1.0, 1.0]]), 2, 1)
    assert not bl.check_feasible(np.array([[1.0, 1.0], [0.0, 0.0]]), 2, 1)


def test_exhaustive_count_small_shape():
    rng = np.random.default_rng(0)
    g = rng.exponential(1.0, size=(4, 5))
    out = bl.exhaustive(g, 2, 2, 1.0)
    assert out.enumerated_count == 7776
    assert out.available and out.feasible
    assert bl.check_feasible(out.assignment, 2, 2)


def test_exhaustive_single_user_served_by_all():
    out = bl.exhaustive(np.array([[3.0, 5.0]]), 1, 1, 1.0)
    np.testing.assert_array_equal(out.assignment, [[1.0, 1.0]])
    assert out.sum_rate == pytest.approx(math.log2(9.0))
    assert out.enumerated_count == 1


def test_exhaustive_matches_independent_enumerator():
    rng = np.random.default_rng(7)
    cases = [(1, 1), (2, 1), (2, 2)] * 5
    for u_cap, l_min in cases:
        g = rng.exponential(1.0, size=(3, 3))
        out = bl.exhaustive(g, u_cap, l_min, 1.0)
        want_rate, want_s, want_count = independent_best(g, u_cap, l_min, 1.0)
        assert out.enumerated_count == want_count
        assert out.sum_rate == pytest.approx(want_rate, rel=1e-12)
        np.testing.assert_array_equal(out.assignment, want_s)


def test_exhaustive_budget_exceeded():
    g = np.random.default_rng(1).exponential(1.0, size=(4, 5))
    out = bl.exhaustive(g, 2, 2, 1.0, budget=100)
    assert not out.available
    assert out.assignment is None
    assert math.isnan(out.sum_rate)
    assert out.enumerated_count == 0


def test_exhaustive_lower_bound_mode_restricts():
    g = np.array([[10.0, 10.0, 10.0],
                  [0.1, 0.2, 0.3],
                  [0.2, 0.1, 0.1]])
    free = bl.exhaustive(g, 1, 1, 1.0, require_lower=False)
    tight = bl.exhaustive(g, 1, 1, 1.0, require_lower=True)
    np.testing.assert_array_equal(free.assignment[0], [1.0, 1.0, 1.0])
    assert not free.feasible
    assert tight.feasible
    assert tight.sum_rate < free.sum_rate


def test_exhaustive_no_candidate_meets_lower_bound():
    out = bl.exhaustive(np.array([[1.0], [2.0]]), 1, 1, 1.0)
    assert out.available
    assert out.assignment is None
    assert out.enumerated_count == 2


def test_random_assignment_always_feasible():
    rng = np.random.default_rng(3)
    for u_cap, l_min, shape in [(2, 2, (4, 5)), (2, 2, (3, 3)),
                                (1, 1, (3, 4))]:
        for _ in range(25):
            g = rng.exponential(1.0, size=shape)
            out = bl.random_assignment(g, u_cap, l_min, rng)
            assert out.feasible
            np.testing.assert_array_equal(out.assignment.sum(axis=0), u_cap)
            assert np.all(out.assignment.sum(axis=1) >= l_min)


def test_random_assignment_full_capacity_case():
    rng = np.random.default_rng(4)
    out = bl.random_assignment(np.ones((2, 3)), 2, 1, rng)
    np.testing.assert_array_equal(out.assignment, np.ones((2, 3)))


def test_random_assignment_repair_path():
    rng = np.random.default_rng(5)
    g = np.random.default_rng(6).exponential(1.0, size=(3, 3))
    for _ in range(20):
        out = bl.random_assignment(g, 2, 2, rng, max_retries=0)
        assert out.feasible
        np.testing.assert_array_equal(out.assignment.sum(axis=0), 2)


def test_random_assignment_rejects_infeasible():
    with pytest.raises(ValueError):
        bl.random_assignment(np.ones((3, 1)), 1, 1,
                             np.random.default_rng(0))
    with pytest.raises(ValueError):
        bl.random_assignment(np.ones((1, 1)), 1, 2,
                             np.random.default_rng(0))


def test_gsd_hand_trace():
    out = bl.gsd(np.array([[3.0, 5.0]]), 1, 1)
    np.testing.assert_array_equal(out.assignment, [[1.0, 1.0]])
    assert out.feasible


def test_gsd_deterministic_and_feasible():
    rng = np.random.default_rng(8)
    for _ in range(50):
        g = rng.exponential(1.0, size=(3, 3))
        a = bl.gsd(g, 2, 2)
        b = bl.gsd(g, 2, 2)
        assert a.feasible
        np.testing.assert_array_equal(a.assignment, b.assignment)
        np.testing.assert_array_equal(a.assignment.sum(axis=0), 2)


def test_gsd_repair_on_concentrated_gains():
    # every user prefers the same two APs, forcing the shortfall path
    g = np.array([[9.0, 8.0, 0.1],
                  [9.1, 8.2, 0.2],
                  [9.2, 8.1, 0.3]])
    out = bl.gsd(g, 2, 2)
    assert out.feasible
    assert np.all(out.assignment.sum(axis=1) >= 2)


def test_gsd_never_beats_exhaustive():
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = rng.exponential(1.0, size=(3, 3))
        greedy = bl.gsd(g, 2, 2)
        bound = bl.exhaustive(g, 2, 2, 1.0)
        assert greedy.sum_rate <= bound.sum_rate + 1e-12


def test_gsd_beats_random_on_average():
    rng = np.random.default_rng(10)
    greedy_rates, random_rates = [], []
    for _ in range(200):
        g = rng.exponential(1.0, size=(4, 5))
        greedy_rates.append(bl.gsd(g, 2, 2).sum_rate)
        random_rates.append(bl.random_assignment(g, 2, 2, rng).sum_rate)
    assert np.mean(greedy_rates) > np.mean(random_rates)


def test_exhaustive_dominates_random_feasible_draws():
    rng = np.random.default_rng(11)
    g = rng.exponential(1.0, size=(3, 3))
    bound = bl.exhaustive(g, 2, 2, 1.0).sum_rate
    for _ in range(1000):
        draw = bl.random_assignment(g, 2, 2, rng)
        assert draw.sum_rate <= bound + 1e-9
