"""Counting capacity-constrained placements of labelled balls into labelled bins.

``M_s(j, C)`` is the number of maps from ``s`` labelled balls to ``j`` labelled
bins in which no bin receives more than ``C`` balls.  It obeys the one-bin
recurrence

    M_s(j) = sum_{k=0}^{min(C, s)} binom(s, k) * M_{s-k}(j-1),   M_0(j) = 1,

which is evaluated here either with exact Python integers or in the log domain.
The log-domain table does not store ``ln M`` directly.  It stores
``ln P(W_1 + ... + W_j = s)`` for i.i.d. truncated-Poisson ``W_i`` at a tilt
``lam``, which keeps every value O(1) near the bulk; ``ln M`` is recovered through

    M_s(j) = s! * g(lam)**j / lam**s * P(W_1 + ... + W_j = s).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import BudgetError, InfeasibleError

BRUTE_FORCE_LIMIT = 10**7
_ENUM_CHUNK = 1 << 20


@dataclass(frozen=True)
class AllocationParams:
    """``n`` labelled balls, ``N`` labelled bins, each bin holding at most ``C``."""

    n: int
    N: int
    C: int

    def __post_init__(self):
        for name in ("n", "N", "C"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {value!r}")
        if self.n < 0:
            raise ValueError(f"n must be non-negative, got {self.n}")
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if self.C < 1:
            raise ValueError(f"C must be at least 1, got {self.C}")

    @property
    def feasible(self) -> bool:
        return self.n <= self.C * self.N

    @property
    def interior(self) -> bool:
        """True when ``0 < n < C*N``, i.e. the tilt equation has a root."""
        return 0 < self.n < self.C * self.N

    def require_feasible(self) -> None:
        if not self.feasible:
            raise InfeasibleError(
                f"n={self.n} balls cannot be placed in N={self.N} bins of capacity C={self.C}"
            )


def _comb_rows(n: int, C: int) -> list[list[int]]:
    return [[math.comb(s, k) for k in range(min(C, s) + 1)] for s in range(n + 1)]


def count_placements(params: AllocationParams) -> int:
    """Exact ``M_n(N, C)``.

    Only two bin-columns are kept, and at column ``j`` only loads that the
    remaining ``N - j`` bins can still complete to ``n`` are evaluated.
    """
    params.require_feasible()
    n, N, C = params.n, params.N, params.C
    if n == 0:
        return 1
    if C >= n:
        return N**n
    binom = _comb_rows(n, C)
    prev = {0: 1}
    for j in range(1, N + 1):
        lo = max(0, n - C * (N - j))
        hi = min(n, C * j)
        cur = {}
        for s in range(lo, hi + 1):
            row = binom[s]
            total = 0
            for k in range(len(row)):
                v = prev.get(s - k)
                if v:
                    total += row[k] * v
            if total:
                cur[s] = total
        prev = cur
    return prev.get(n, 0)


def tilt_log_weights(lam: float, C: int) -> tuple[np.ndarray, float]:
    """``ln P(W = k)`` for ``k = 0..C`` and ``ln g(lam)``, computed without overflow."""
    if not lam > 0:
        raise ValueError(f"tilt must be positive, got {lam}")
    log_lam = math.log(lam)
    terms = np.array([k * log_lam - math.lgamma(k + 1) for k in range(C + 1)])
    log_g = float(np.logaddexp.reduce(terms))
    return terms - log_g, log_g


def _logsumexp_rows(stack: np.ndarray) -> np.ndarray:
    peak = stack.max(axis=0)
    out = np.full(stack.shape[1], -np.inf)
    ok = np.isfinite(peak)
    if ok.any():
        out[ok] = peak[ok] + np.log(np.exp(stack[:, ok] - peak[ok]).sum(axis=0))
    return out


@dataclass(frozen=True, eq=False)
class CountTable:
    """Table of ``M_s(j, C)`` for bins ``first_bin <= j <= N`` and loads ``0 <= s <= n``.

    ``mode == "exact"``: ``data[j - first_bin][s]`` is the exact integer (0 if infeasible).
    ``mode == "log"``: ``data[j - first_bin, s]`` is ``ln P(W_1+...+W_j = s)`` at
    tilt ``lam`` (``-inf`` if infeasible); use :meth:`log` for ``ln M``.
    """

    params: AllocationParams
    mode: str
    first_bin: int
    data: object
    lam: float | None = None
    log_g: float | None = None
    log_pmf: np.ndarray | None = None

    def _check(self, j: int, s: int) -> None:
        if not (self.first_bin <= j <= self.params.N):
            raise KeyError(f"bins j={j} outside stored range [{self.first_bin}, {self.params.N}]")
        if not (0 <= s <= self.params.n):
            raise KeyError(f"load s={s} outside stored range [0, {self.params.n}]")

    def exact(self, j: int, s: int) -> int:
        if self.mode != "exact":
            raise ValueError("exact values are only available in exact mode")
        self._check(j, s)
        return self.data[j - self.first_bin][s]

    def log_prob(self, j: int, s: int) -> float:
        """``ln P(W_1+...+W_j = s)`` at the table's tilt (log mode)."""
        if self.mode != "log":
            raise ValueError("tilted probabilities are only stored in log mode")
        self._check(j, s)
        return float(self.data[j - self.first_bin, s])

    def log(self, j: int, s: int) -> float:
        """``ln M_s(j, C)``; ``-inf`` when no placement exists."""
        self._check(j, s)
        if self.mode == "exact":
            v = self.data[j - self.first_bin][s]
            return math.log(v) if v else -math.inf
        lp = float(self.data[j - self.first_bin, s])
        if lp == -math.inf:
            return -math.inf
        return lp - s * math.log(self.lam) + j * self.log_g + math.lgamma(s + 1)

    def log_ratio(self, j1: int, s1: int, j0: int, s0: int) -> float:
        """``ln(M_{s1}(j1) / M_{s0}(j0))`` without forming either log count."""
        if self.mode == "exact":
            return self.log(j1, s1) - self.log(j0, s0)
        a = self.log_prob(j1, s1)
        if a == -math.inf:
            return -math.inf
        b = self.log_prob(j0, s0)
        return (
            a
            - b
            - (s1 - s0) * math.log(self.lam)
            + (j1 - j0) * self.log_g
            + math.lgamma(s1 + 1)
            - math.lgamma(s0 + 1)
        )

    def as_log_array(self) -> np.ndarray:
        """``ln M_s(j)`` as an array with rows ``j = first_bin..N``."""
        n = self.params.n
        rows = self.params.N - self.first_bin + 1
        out = np.empty((rows, n + 1))
        for r in range(rows):
            j = self.first_bin + r
            out[r] = [self.log(j, s) for s in range(n + 1)]
        return out


def exact_count_table(params: AllocationParams, columns: int | None = None) -> CountTable:
    """Exact big-integer table; keeps the last ``columns`` bin-columns (all if ``None``)."""
    n, N, C = params.n, params.N, params.C
    first = 0 if columns is None else max(0, N - columns + 1)
    binom = _comb_rows(n, C)
    prev = [1] + [0] * n
    kept = [prev] if first == 0 else []
    for j in range(1, N + 1):
        cur = [0] * (n + 1)
        for s in range(min(n, C * j) + 1):
            row = binom[s]
            cur[s] = sum(row[k] * prev[s - k] for k in range(len(row)))
        prev = cur
        if j >= first:
            kept.append(cur)
    return CountTable(params=params, mode="exact", first_bin=first, data=tuple(kept))


LOG_TABLE_WORK = 2 * 10**9


def log_count_table(
    params: AllocationParams, columns: int | None = None, lam: float | None = None
) -> CountTable:
    """Log-domain table built by log-sum-exp over the tilted one-bin recurrence.

    ``lam`` defaults to the solved tilt for ``params`` (1.0 when ``n`` is 0 or ``C*N``).
    Every positive tilt gives the same ``ln M``; the solved one keeps the stored
    probabilities largest where callers look.
    """
    n, N, C = params.n, params.N, params.C
    work = N * (n + 1) * (min(C, n) + 1)
    if work > LOG_TABLE_WORK:
        raise BudgetError(f"log count table needs N*(n+1)*(C+1) = {work} updates; limit {LOG_TABLE_WORK}")
    if lam is None:
        if params.interior:
            from .tilted import solve_lambda0

            lam = solve_lambda0(params).lambda0
        else:
            lam = 1.0
    log_pmf, log_g = tilt_log_weights(lam, C)
    first = 0 if columns is None else max(0, N - columns + 1)
    col = np.full(n + 1, -np.inf)
    col[0] = 0.0
    out = np.empty((N - first + 1, n + 1))
    if first == 0:
        out[0] = col
    stack = np.full((C + 1, n + 1), -np.inf)
    for j in range(1, N + 1):
        stack.fill(-np.inf)
        for k in range(min(C, n) + 1):
            stack[k, k:] = col[: n + 1 - k] + log_pmf[k]
        col = _logsumexp_rows(stack)
        if j >= first:
            out[j - first] = col
    return CountTable(
        params=params,
        mode="log",
        first_bin=first,
        data=out,
        lam=float(lam),
        log_g=log_g,
        log_pmf=log_pmf,
    )


@lru_cache(maxsize=64)
def brute_force_histograms(params: AllocationParams) -> dict[tuple[int, ...], int]:
    """Enumerate all ``N**n`` placements; tally full occupancy histograms of valid ones.

    Keys are ``(N_0, ..., N_C)`` with ``N_v`` the number of bins holding exactly ``v``
    balls; values are the numbers of capacity-respecting placements producing them.
    """
    n, N, C = params.n, params.N, params.C
    total = N**n
    if total > BRUTE_FORCE_LIMIT:
        raise BudgetError(
            f"brute force needs N**n = {total} placements, above the limit {BRUTE_FORCE_LIMIT}"
        )
    tally: Counter = Counter()
    for start in range(0, total, _ENUM_CHUNK):
        codes = np.arange(start, min(total, start + _ENUM_CHUNK), dtype=np.int64)
        loads = np.zeros((codes.size, N), dtype=np.int16)
        for _ in range(n):
            digit = codes % N
            codes //= N
            for b in range(N):
                loads[:, b] += digit == b
        valid = loads[loads.max(axis=1) <= C]
        if valid.size == 0:
            continue
        hists = np.stack([(valid == v).sum(axis=1) for v in range(C + 1)], axis=1)
        keys, counts = np.unique(hists, axis=0, return_counts=True)
        for key, cnt in zip(keys, counts):
            tally[tuple(int(x) for x in key)] += int(cnt)
    return dict(tally)


def brute_force_count(params: AllocationParams) -> int:
    return sum(brute_force_histograms(params).values())


def brute_force_occupancy_distribution(
    params: AllocationParams, profile: Sequence[int]
) -> dict[tuple[int, ...], Fraction]:
    """Exact law of ``(X_{m_1}, ..., X_{m_r})`` by enumeration of every placement."""
    m = tuple(int(v) for v in profile)
    if any(v < 0 or v > params.C for v in m):
        raise ValueError(f"fill levels {m} must lie in [0, {params.C}]")
    params.require_feasible()
    hists = brute_force_histograms(params)
    total = sum(hists.values())
    law: Counter = Counter()
    for h, cnt in hists.items():
        law[tuple(h[v] for v in m)] += cnt
    return {x: Fraction(c, total) for x, c in sorted(law.items())}
