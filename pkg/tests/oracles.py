"""Independent reference computations used only by the tests.

None of these share code with the package: counts come from summing over
occupancy histograms, moments from enumerating placements, and the truncated
Poisson law from its definition in exact rational arithmetic.
"""

import math
from fractions import Fraction
from functools import lru_cache


def histograms(n, N, C):
    """Every ``(N_0, ..., N_C)`` with ``sum N_v = N`` and ``sum v N_v = n``."""

    def rec(v, bins_left, balls_left):
        if v == 0:
            if balls_left == 0:
                yield (bins_left,)
            return
        for cnt in range(min(bins_left, balls_left // v) + 1):
            for rest in rec(v - 1, bins_left - cnt, balls_left - v * cnt):
                yield rest + (cnt,)

    yield from rec(C, N, n)


def placements_with_histogram(h, n):
    """Number of labelled placements whose bin-load histogram is ``h``."""
    N = sum(h)
    ways_bins = math.factorial(N)
    ways_balls = math.factorial(n)
    for v, cnt in enumerate(h):
        ways_bins //= math.factorial(cnt)
        ways_balls //= math.factorial(v) ** cnt
    return ways_bins * ways_balls


@lru_cache(maxsize=None)
def count(n, N, C):
    if n > C * N:
        return 0
    return sum(placements_with_histogram(h, n) for h in histograms(n, N, C))


def falling(x, k):
    out = 1
    for i in range(k):
        out *= x - i
    return out


def truncated_poisson(lam, C):
    """``(pmf, mean, variance)`` from the definition, in exact rationals."""
    lam = Fraction(lam)
    w = [lam**k / math.factorial(k) for k in range(C + 1)]
    g = sum(w)
    pmf = [x / g for x in w]
    mean = sum(k * p for k, p in enumerate(pmf))
    var = sum((k - mean) ** 2 * p for k, p in enumerate(pmf))
    return pmf, mean, var


def factorial_moment(n, N, C, m, k):
    """``E prod [X_{m_i}]_{k_i}`` by weighting every histogram with its placement count."""
    total = Fraction(0)
    weight = 0
    for h in histograms(n, N, C):
        w = placements_with_histogram(h, n)
        weight += w
        term = w
        for mi, ki in zip(m, k):
            term *= falling(h[mi], ki)
        total += term
    return total / weight
