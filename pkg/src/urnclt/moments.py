"""Joint factorial moments of occupancy counts.

Choosing which ``s = sum(k)`` bins carry the prescribed loads and which balls go
into them gives the exact identity

    E prod_i [X_{m_i}]_{k_i} = [N]_s * n! / ((n - t)! prod_i (m_i!)^{k_i})
                               * M_{n-t}(N - s) / M_n(N),      t = sum(k_i m_i),

evaluated here either as an exact rational or in the log domain.  The large-N
approximation replaces the right-hand side by
``prod mu_i^{k_i} * exp(-(sum k_i (m_i - n/N))^2 / (2 N var W) - s^2 / (2 N))``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetError
from .occupancy import AllocationParams, CountTable, exact_count_table, log_count_table
from .tilted import TiltSolution

GRID_BUDGET = 10**9
EXACT_TABLE_BUDGET = 2 * 10**5


def validate_levels(m: Sequence[int], C: int) -> tuple[int, ...]:
    levels = tuple(int(v) for v in m)
    if not levels:
        raise ValueError("profile needs at least one fill level")
    if len(set(levels)) != len(levels):
        raise ValueError(f"fill levels must be distinct, got {levels}")
    bad = [v for v in levels if not 0 <= v <= C]
    if bad:
        raise ValueError(f"fill levels {bad} outside [0, {C}]")
    return levels


@dataclass(frozen=True, eq=False)
class OccupancyProfile:
    """Target fill levels ``m`` and the means of ``X_{m_i}``.

    ``mode == "exact"`` means hold exact rationals (``Fraction``) or, for log-domain
    tables, floats of the exact value; ``mode == "asymptotic"`` means are
    ``N P(W = m_i)`` at the solved tilt.
    """

    params: AllocationParams
    m: tuple[int, ...]
    mu: tuple
    mode: str

    @property
    def r(self) -> int:
        return len(self.m)

    def mu_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.mu])


def asymptotic_profile(params: AllocationParams, m: Sequence[int], tilt: TiltSolution) -> OccupancyProfile:
    levels = validate_levels(m, params.C)
    mu = tuple(params.N * float(tilt.law.pmf[v]) for v in levels)
    return OccupancyProfile(params, levels, mu, "asymptotic")


def moment_table(params: AllocationParams, max_total: int, exact: bool | None = None) -> CountTable:
    """Count table wide enough for every moment order with ``sum(k) <= max_total``.

    ``exact=None`` picks big integers for small instances and the log domain otherwise.
    """
    columns = min(params.N, max_total) + 1
    if exact is None:
        exact = params.N * (params.n + 1) <= EXACT_TABLE_BUDGET
    if exact:
        return exact_count_table(params, columns=columns)
    return log_count_table(params, columns=columns)


def exact_profile(params: AllocationParams, m: Sequence[int], table: CountTable | None = None) -> OccupancyProfile:
    levels = validate_levels(m, params.C)
    if table is None:
        table = moment_table(params, 1)
    unit = [tuple(int(i == j) for j in range(len(levels))) for i in range(len(levels))]
    if table.mode == "exact":
        mu = tuple(_exact_moment(params, levels, e, table) for e in unit)
    else:
        mu = tuple(math.exp(_log_moment(params, levels, e, table)) for e in unit)
    return OccupancyProfile(params, levels, mu, "exact")


def _totals(m: Sequence[int], k: Sequence[int]) -> tuple[int, int]:
    if len(k) != len(m):
        raise ValueError(f"moment order {tuple(k)} does not match {len(m)} fill levels")
    if any(v < 0 for v in k):
        raise ValueError(f"moment order {tuple(k)} has negative entries")
    return sum(k), sum(ki * mi for ki, mi in zip(k, m))


def _reachable(params: AllocationParams, s: int, t: int) -> bool:
    return s <= params.N and t <= params.n and params.n - t <= params.C * (params.N - s)


def _exact_moment(params, m, k, table: CountTable) -> Fraction:
    s, t = _totals(m, k)
    if not _reachable(params, s, t):
        return Fraction(0)
    n, N = params.n, params.N
    falling = math.perm(N, s)
    multinomial = math.factorial(n) // math.factorial(n - t)
    for ki, mi in zip(k, m):
        multinomial //= math.factorial(mi) ** ki
    return Fraction(falling * multinomial * table.exact(N - s, n - t), table.exact(N, n))


def _log_moment(params, m, k, table: CountTable) -> float:
    s, t = _totals(m, k)
    if not _reachable(params, s, t):
        return -math.inf
    n, N = params.n, params.N
    head = math.lgamma(N + 1) - math.lgamma(N - s + 1)
    head -= math.fsum(ki * math.lgamma(mi + 1) for ki, mi in zip(k, m))
    if table.mode == "exact":
        head += math.lgamma(n + 1) - math.lgamma(n - t + 1)
        return head + table.log_ratio(N - s, n - t, N, n)
    a = table.log_prob(N - s, n - t)
    if a == -math.inf:
        return -math.inf
    return head + a - table.log_prob(N, n) + t * math.log(table.lam) - s * table.log_g


def exact_factorial_moment(profile: OccupancyProfile, k: Sequence[int], table: CountTable | None = None) -> Fraction:
    """``E prod [X_{m_i}]_{k_i}`` as an exact rational (0 for unreachable orders)."""
    s, _ = _totals(profile.m, k)
    if table is None:
        table = exact_count_table(profile.params, columns=min(s, profile.params.N) + 1)
    if table.mode != "exact":
        raise ValueError("exact moments need an exact-mode count table")
    return _exact_moment(profile.params, profile.m, tuple(k), table)


def log_factorial_moment(profile: OccupancyProfile, k: Sequence[int], table: CountTable) -> float:
    """Natural log of the exact factorial moment (``-inf`` when it is zero)."""
    return _log_moment(profile.params, profile.m, tuple(k), table)


def asymptotic_factorial_moment(profile: OccupancyProfile, k: Sequence[int], tilt: TiltSolution) -> float:
    """Log of the large-N approximation to ``E prod [X_{m_i}]_{k_i}``."""
    params = profile.params
    s, _ = _totals(profile.m, k)
    N, n = params.N, params.n
    lam = tilt.lambda0
    if s > (N / lam) ** (2 / 3):
        warnings.warn(
            f"sum(k)={s} exceeds (N/lam0)^(2/3)={(N / lam) ** (2 / 3):.3g}; "
            "the approximation is outside its regime",
            stacklevel=2,
        )
    law = tilt.law
    log_mu = [math.log(N) + float(law.log_pmf[mi]) for mi in profile.m]
    drift = math.fsum(ki * (mi - n / N) for ki, mi in zip(k, profile.m))
    return (
        math.fsum(ki * lm for ki, lm in zip(k, log_mu))
        - drift * drift / (2 * N * law.variance)
        - s * s / (2 * N)
    )


def log_falling_factorial(x: float, k: int) -> tuple[float, float]:
    """``(ln [x]_k, k ln x - k^2 / (2x))``; the first by direct summation."""
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k == 0:
        return 0.0, 0.0
    if not x > k - 1:
        raise ValueError(f"[x]_k has a non-positive factor for x={x}, k={k}")
    exact = math.fsum(math.log(x - i) for i in range(k))
    return exact, k * math.log(x) - k * k / (2 * x)


def box_grid(maxima: Sequence[int]) -> list[tuple[int, ...]]:
    return list(itertools.product(*(range(int(v) + 1) for v in maxima)))


def simplex_grid(r: int, total: int) -> list[tuple[int, ...]]:
    """All non-negative ``k`` in dimension ``r`` with ``sum(k) <= total``."""
    return [k for k in itertools.product(range(total + 1), repeat=r) if sum(k) <= total]


def default_grid_total(N: int, lam: float, fraction: float = 0.25) -> int:
    """``floor(fraction * (N / lam)^(2/3))``, the default cap on ``sum(k)``."""
    return int(math.floor(fraction * (N / lam) ** (2 / 3)))


@dataclass
class MomentGrid:
    m: tuple[int, ...]
    rows: list[tuple[tuple[int, ...], float, float, float]]

    @property
    def max_rel_error(self) -> float:
        return max(row[3] for row in self.rows)

    def argmax(self) -> tuple[int, ...]:
        return max(self.rows, key=lambda row: row[3])[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        r = len(self.m)
        w.writerow([f"k_{i + 1}" for i in range(r)] + ["exact_log", "asymptotic_log", "rel_error"])
        for k, ex, asy, err in self.rows:
            w.writerow(list(k) + [repr(ex), repr(asy), repr(err)])
        w.writerow(["max"] + [""] * (r - 1) + ["", "", repr(self.max_rel_error)])
        return buf.getvalue()


def _check_budget(table_params: AllocationParams, points: int) -> None:
    work = table_params.N * (table_params.n + 1) * (table_params.C + 1)
    if work > GRID_BUDGET or points > GRID_BUDGET:
        raise BudgetError(
            f"moment grid needs a {table_params.N}x{table_params.n + 1} count table and "
            f"{points} grid points; budget is {GRID_BUDGET}"
        )


def moment_comparison_grid(
    profile: OccupancyProfile,
    tilt: TiltSolution,
    k_domain: Iterable[Sequence[int]],
    table: CountTable | None = None,
) -> MomentGrid:
    """Exact vs. asymptotic log-moments over a set of orders, with relative errors."""
    ks = [tuple(int(v) for v in k) for k in k_domain]
    if not ks:
        raise ValueError("empty moment grid")
    params = profile.params
    max_total = max(sum(k) for k in ks)
    if table is None:
        _check_budget(params, len(ks))
        table = moment_table(params, max_total)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in ks:
            ex = _log_moment(params, profile.m, k, table)
            asy = asymptotic_factorial_moment(profile, k, tilt)
            err = abs(math.expm1(asy - ex)) if ex > -math.inf else math.inf
            rows.append((k, ex, asy, err))
    return MomentGrid(profile.m, rows)


@dataclass
class BoundednessReport:
    bound: float
    subsets: list[dict]
    excluded: int

    @property
    def flagged(self) -> bool:
        return any(entry["flagged"] for entry in self.subsets)

    def to_json(self) -> str:
        return json.dumps(
            {"bound": self.bound, "excluded_points": self.excluded, "subsets": self.subsets},
            indent=2,
            sort_keys=True,
        )


def overall_boundedness_check(
    profile: OccupancyProfile,
    tilt: TiltSolution | None,
    k_domain: Iterable[Sequence[int]],
    table: CountTable | None = None,
    bound: float = 10.0,
) -> BoundednessReport:
    """For each non-empty ``R``, sup of ``E prod_R [X_i]_{k_i} / prod_R [mu_i]_{k_i}``.

    ``mu`` are the exact means.  Orders whose ``prod [mu_i]_{k_i}`` is not positive
    are excluded and counted.  ``tilt`` is accepted for symmetry with the grid
    comparison and is not needed by the ratio itself.
    """
    ks = [tuple(int(v) for v in k) for k in k_domain]
    params = profile.params
    r = profile.r
    if table is None:
        table = moment_table(params, max([1] + [sum(k) for k in ks]))
    exact = table.mode == "exact"
    mu = exact_profile(params, profile.m, table).mu
    entries = []
    excluded = 0
    for size in range(1, r + 1):
        for R in itertools.combinations(range(r), size):
            projected = sorted({tuple(k[i] if i in R else 0 for i in range(r)) for k in ks})
            best, best_k = None, None
            for k in projected:
                if exact:
                    denom = Fraction(1)
                    for i in R:
                        for step in range(k[i]):
                            denom *= mu[i] - step
                    if denom <= 0:
                        excluded += 1
                        continue
                    ratio = _exact_moment(params, profile.m, k, table) / denom
                    value = float(ratio)
                else:
                    if any(not float(mu[i]) > k[i] - 1 for i in R if k[i]):
                        excluded += 1
                        continue
                    log_den = math.fsum(log_falling_factorial(float(mu[i]), k[i])[0] for i in R)
                    value = math.exp(_log_moment(params, profile.m, k, table) - log_den)
                if best is None or value > best:
                    best, best_k = value, k
            entries.append(
                {
                    "R": [profile.m[i] for i in R],
                    "sup_ratio": best,
                    "argmax_k": list(best_k) if best_k is not None else None,
                    "flagged": best is not None and best > bound,
                }
            )
    return BoundednessReport(bound, entries, excluded)


def exact_covariance(profile: OccupancyProfile, table: CountTable) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean vector and covariance matrix of ``(X_{m_1}, ..., X_{m_r})``.

    Built from first and second factorial moments: ``var X = E[X]_2 + EX - (EX)^2``
    and ``cov(X_i, X_j) = E[X_i]_1[X_j]_1 - EX_i EX_j`` (distinct levels count
    distinct bins).  Exact tables are evaluated in rationals before rounding.
    """
    params, m, r = profile.params, profile.m, profile.r
    exact = table.mode == "exact"

    def moment(k):
        if exact:
            return _exact_moment(params, m, k, table)
        return math.exp(_log_moment(params, m, k, table))

    def unit(*idx):
        k = [0] * r
        for i in idx:
            k[i] += 1
        return tuple(k)

    mu = [moment(unit(i)) for i in range(r)]
    cov = np.empty((r, r))
    for i in range(r):
        for j in range(i, r):
            if i == j:
                v = moment(unit(i, i)) + mu[i] - mu[i] * mu[i]
            else:
                v = moment(unit(i, j)) - mu[i] * mu[j]
            cov[i, j] = cov[j, i] = float(v)
    return np.array([float(v) for v in mu]), cov
