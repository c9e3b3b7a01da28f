import math

import numpy as np
import pytest

import oracles
from urnclt.errors import InfeasibleError
from urnclt.occupancy import AllocationParams, count_placements
from urnclt.tilted import (
    TiltedPoisson,
    balls_for_lambda,
    lambda_capacity_note_check,
    lambda_for_mean_load,
    llt_count_approx,
    solve_lambda0,
    variance_expansion_check,
)


@pytest.mark.parametrize("n,N,C,expected", [(1, 2, 1, 1.0), (3, 4, 1, 3.0), (100, 100, 50, 1.0)])
def test_lambda0_examples(n, N, C, expected):
    assert solve_lambda0(AllocationParams(n, N, C)).lambda0 == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("n,N,C", [(0, 5, 3), (15, 5, 3), (16, 5, 3)])
def test_lambda0_needs_interior(n, N, C):
    with pytest.raises(InfeasibleError):
        solve_lambda0(AllocationParams(n, N, C))


@pytest.mark.parametrize("C", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("lam", [0.01, 0.7, 3.0, 40.0, 2500.0])
def test_law_matches_rational_oracle(C, lam):
    law = TiltedPoisson(lam, C)
    pmf, mean, var = oracles.truncated_poisson(lam, C)
    assert np.allclose(law.pmf, [float(p) for p in pmf], rtol=1e-12, atol=0)
    assert law.mean == pytest.approx(float(mean), rel=1e-12)
    assert law.variance == pytest.approx(float(var), rel=1e-10)
    assert law.pmf.sum() == pytest.approx(1.0, abs=1e-14)


def test_closed_form_moments_agree():
    for C in (2, 3, 6):
        for lam in (0.3, 4.0, 90.0):
            law = TiltedPoisson(lam, C)
            mean, var = law.closed_form_moments()
            assert mean == pytest.approx(law.mean, rel=1e-12)
            assert var == pytest.approx(law.variance, rel=1e-9)


def test_mean_is_increasing():
    grid = np.logspace(-3, 4, 1000)
    for C in (1, 3, 7):
        means = [TiltedPoisson(lam, C).mean for lam in grid]
        assert all(b > a for a, b in zip(means, means[1:]))


def test_solver_round_trip():
    for C in (2, 3, 5):
        for N in (10, 1000, 10**6):
            for frac in (0.01, 0.5, 0.9, 0.999):
                n = max(1, min(C * N - 1, int(frac * C * N)))
                tilt = solve_lambda0(AllocationParams(n, N, C))
                assert tilt.law.mean == pytest.approx(n / N, rel=1e-12)
                assert tilt.law.deficit == pytest.approx(C - n / N, rel=1e-9)


def test_near_capacity_solves_via_deficit():
    N = 10**6
    tilt = solve_lambda0(AllocationParams(3 * N - 1, N, 3))
    assert tilt.law.deficit == pytest.approx(1 / N, rel=1e-9)


def test_lambda_for_mean_load():
    assert lambda_for_mean_load(1, 0.5) == pytest.approx(1.0, rel=1e-12)
    assert TiltedPoisson(lambda_for_mean_load(3, 2.4), 3).mean == pytest.approx(2.4, rel=1e-12)


def test_balls_for_lambda_hits_target():
    n = balls_for_lambda(2000, 3, 5.0)
    assert n == 4703
    assert solve_lambda0(AllocationParams(n, 2000, 3)).lambda0 == pytest.approx(5.0, rel=1e-3)


def test_variance_examples():
    law = TiltedPoisson(1e3, 3)
    assert law.variance == pytest.approx(3e-3 * (1 + 2e-3), rel=1e-5)
    exact, expansion = variance_expansion_check(TiltedPoisson(100.0, 2))
    assert expansion == pytest.approx(0.02)
    # the leftover is third order, 11.7 / lam**3 at this point
    assert abs(exact - expansion) < 20 / 100.0**3
    assert TiltedPoisson(1.0, 1).variance == pytest.approx(0.25)


def test_variance_expansion_error_is_cubic():
    for C in range(2, 7):
        for lam in np.logspace(1, 4, 40):
            exact, expansion = variance_expansion_check(TiltedPoisson(lam, C))
            assert abs(exact - expansion) * lam**3 < 10 * C**3


def test_variance_expansion_requires_large_lambda():
    with pytest.raises(ValueError):
        variance_expansion_check(TiltedPoisson(0.5, 3))


def test_bigG_scales_like_inverse_square():
    for C in (2, 3, 5):
        vals = [TiltedPoisson(lam, C).bigG * lam**2 for lam in (10.0, 100.0, 1000.0, 1e4)]
        assert all(0.5 * C < v < 2 * C for v in vals)


def test_g_derivatives_by_finite_difference():
    law = TiltedPoisson(2.5, 4)
    g0, g1, g2 = law.g_derivatives()
    h = 1e-5
    lo, hi = TiltedPoisson(2.5 - h, 4).g, TiltedPoisson(2.5 + h, 4).g
    assert g0 == pytest.approx(law.g)
    assert g1 == pytest.approx((hi - lo) / (2 * h), rel=1e-8)
    assert g2 == pytest.approx((hi - 2 * g0 + lo) / h**2, rel=1e-4)


def test_llt_small_instance():
    p = AllocationParams(3, 2, 2)
    approx = llt_count_approx(p, solve_lambda0(p))
    assert abs(approx - math.log(6)) <= 0.25 * math.log(6)


def test_llt_medium_instance():
    p = AllocationParams(540, 200, 3)
    approx = llt_count_approx(p, solve_lambda0(p))
    assert abs(math.expm1(approx - math.log(count_placements(p)))) <= 0.05


def test_llt_rejects_mismatched_tilt():
    with pytest.raises(ValueError):
        llt_count_approx(AllocationParams(5, 4, 2), solve_lambda0(AllocationParams(6, 4, 2)))


def test_capacity_note_rows():
    rows = lambda_capacity_note_check([AllocationParams(2990, 1000, 3), AllocationParams(299900, 10**5, 3)])
    assert 0.8 <= rows[0].ratio <= 1.2
    assert abs(rows[1].ratio - 1) < abs(rows[0].ratio - 1)


def test_capacity_note_single_capacity_closed_form():
    N = 50
    (row,) = lambda_capacity_note_check([AllocationParams(N - 1, N, 1)])
    assert row.inv_lambda == pytest.approx(1 / (N - 1), rel=1e-10)
    assert row.gap == pytest.approx(1 / N)
    assert row.ratio == pytest.approx(N / (N - 1), rel=1e-10)


def test_capacity_note_rejects_light_loads():
    with pytest.raises(ValueError):
        lambda_capacity_note_check([AllocationParams(100, 1000, 3)])
