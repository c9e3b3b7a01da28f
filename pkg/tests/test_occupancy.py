import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from urnclt.errors import BudgetError, InfeasibleError
from urnclt.occupancy import (
    AllocationParams,
    brute_force_count,
    brute_force_histograms,
    brute_force_occupancy_distribution,
    count_placements,
    exact_count_table,
    log_count_table,
)


@pytest.mark.parametrize(
    "n,N,C,expected",
    [(3, 2, 2, 6), (5, 3, 5, 243), (4, 2, 2, 6), (2, 2, 1, 2)],
)
def test_count_examples(n, N, C, expected):
    assert count_placements(AllocationParams(n, N, C)) == expected


def test_infeasible_count_raises():
    with pytest.raises(InfeasibleError):
        count_placements(AllocationParams(10, 2, 2))


@pytest.mark.parametrize("bad", [(-1, 2, 2), (3, 0, 2), (3, 2, 0)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        AllocationParams(*bad)


def test_params_reject_non_integers():
    with pytest.raises(TypeError):
        AllocationParams(3.0, 2, 2)


def test_full_capacity_is_feasible_but_not_interior():
    p = AllocationParams(4, 2, 2)
    assert p.feasible and not p.interior
    assert count_placements(p) == 6


def test_brute_force_matches_histogram_oracle():
    for N in range(1, 5):
        for C in range(1, 4):
            for n in range(0, C * N + 1):
                if N**n > 10**5:
                    continue
                p = AllocationParams(n, N, C)
                expected = oracles.count(n, N, C)
                assert brute_force_count(p) == expected
                assert count_placements(p) == expected


def test_brute_force_refuses_large_instances():
    with pytest.raises(BudgetError):
        brute_force_histograms(AllocationParams(20, 10, 3))


def test_dp_matches_histogram_oracle_beyond_brute_force():
    for n, N, C in [(40, 20, 3), (33, 12, 4), (60, 25, 3), (17, 9, 2)]:
        assert count_placements(AllocationParams(n, N, C)) == oracles.count(n, N, C)


def test_unconstrained_shortcut():
    assert count_placements(AllocationParams(7, 5, 7)) == 5**7
    assert count_placements(AllocationParams(7, 5, 6)) == 5**7 - 5


@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 30))
@settings(max_examples=60, deadline=None)
def test_monotone_in_capacity(N, C, n):
    if n > C * N:
        return
    a = count_placements(AllocationParams(n, N, C))
    b = count_placements(AllocationParams(n, N, C + 1))
    assert b >= a


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 24))
@settings(max_examples=60, deadline=None)
def test_one_bin_split(N, C, n):
    """Conditioning on the first bin's load reproduces the count."""
    if N < 2 or n > C * N:
        return
    total = sum(
        math.comb(n, k) * count_placements(AllocationParams(n - k, N - 1, C))
        for k in range(min(C, n) + 1)
        if n - k <= C * (N - 1)
    )
    assert total == count_placements(AllocationParams(n, N, C))


def test_exact_table_entries():
    p = AllocationParams(8, 4, 3)
    t = exact_count_table(p)
    for j in range(5):
        for s in range(9):
            assert t.exact(j, s) == oracles.count(s, j, 3)


def test_exact_table_keeps_requested_columns():
    p = AllocationParams(10, 6, 3)
    t = exact_count_table(p, columns=2)
    assert t.first_bin == 5
    assert t.exact(6, 10) == oracles.count(10, 6, 3)
    with pytest.raises(KeyError):
        t.exact(4, 3)


def test_log_table_examples():
    assert log_count_table(AllocationParams(3, 2, 2)).log(2, 3) == pytest.approx(math.log(6), rel=1e-12)
    assert log_count_table(AllocationParams(0, 7, 1)).log(7, 0) == 0.0
    t = log_count_table(AllocationParams(8, 4, 3))
    assert math.exp(t.log(4, 8)) == pytest.approx(count_placements(AllocationParams(8, 4, 3)), rel=1e-10)


def test_log_table_against_exact_table():
    p = AllocationParams(200, 100, 3)
    exact = exact_count_table(p)
    approx = log_count_table(p).as_log_array()
    worst = 0.0
    for j in range(p.N + 1):
        for s in range(p.n + 1):
            v = exact.exact(j, s)
            if v == 0:
                assert approx[j, s] == -math.inf
                continue
            worst = max(worst, abs(math.expm1(approx[j, s] - math.log(v))))
    assert worst <= 1e-10


def test_log_table_independent_of_tilt():
    p = AllocationParams(30, 12, 3)
    a = log_count_table(p).as_log_array()
    b = log_count_table(p, lam=0.7).as_log_array()
    finite = np.isfinite(a)
    assert np.array_equal(finite, np.isfinite(b))
    assert np.allclose(a[finite], b[finite], rtol=1e-12, atol=1e-10)


def test_log_ratio_matches_difference():
    p = AllocationParams(50, 20, 3)
    t = log_count_table(p)
    assert t.log_ratio(17, 42, 20, 50) == pytest.approx(t.log(17, 42) - t.log(20, 50), abs=1e-10)


def test_log_table_budget():
    with pytest.raises(BudgetError):
        log_count_table(AllocationParams(2 * 10**6, 10**6, 3))


@pytest.mark.parametrize(
    "params,m,expected",
    [
        ((3, 2, 2), (2,), {(1,): Fraction(1)}),
        ((4, 2, 2), (2,), {(2,): Fraction(1)}),
        ((1, 1, 1), (1,), {(1,): Fraction(1)}),
    ],
)
def test_occupancy_distribution_examples(params, m, expected):
    assert brute_force_occupancy_distribution(AllocationParams(*params), m) == expected


def test_occupancy_distribution_sums_to_one():
    law = brute_force_occupancy_distribution(AllocationParams(6, 4, 3), (0, 2))
    assert sum(law.values()) == 1
