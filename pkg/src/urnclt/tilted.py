"""Poisson law conditioned on ``W <= C`` and the tilt that matches a target mean load.

``P(W = j) = lam**j / (j! g(lam))`` with ``g(lam) = sum_{k<=C} lam**k / k!``.
The mean ``lam g'/g`` is strictly increasing in ``lam`` (its derivative in ``ln lam``
is the variance), which is what makes the tilt equation uniquely solvable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InfeasibleError
from .occupancy import AllocationParams, tilt_log_weights

SOLVER_RTOL = 1e-13
_MAX_ITER = 400


@dataclass(frozen=True, eq=False)
class TiltedPoisson:
    """Truncated Poisson law at tilt ``lam`` with capacity ``C``."""

    lam: float
    C: int
    log_pmf: np.ndarray = field(init=False, repr=False)
    log_g: float = field(init=False)
    pmf: np.ndarray = field(init=False, repr=False)
    mean: float = field(init=False)
    deficit: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive and finite, got {self.lam}")
        if self.C < 1:
            raise ValueError(f"C must be at least 1, got {self.C}")
        log_pmf, log_g = tilt_log_weights(self.lam, self.C)
        pmf = np.exp(log_pmf)
        j = np.arange(self.C + 1)
        # mean and deficit are summed separately so that whichever is small keeps
        # full relative precision; variance uses a centred second pass.
        mean = math.fsum(j * pmf)
        deficit = math.fsum((self.C - j) * pmf)
        centre = mean if mean <= self.C / 2 else self.C - deficit
        variance = math.fsum((j - centre) ** 2 * pmf)
        set_ = object.__setattr__
        set_(self, "log_pmf", log_pmf)
        set_(self, "log_g", log_g)
        set_(self, "pmf", pmf)
        set_(self, "mean", mean)
        set_(self, "deficit", deficit)
        set_(self, "variance", variance)

    @property
    def g(self) -> float:
        return math.exp(self.log_g)

    @property
    def bigG(self) -> float:
        """``var(W) / lam``."""
        return self.variance / self.lam

    def g_derivatives(self) -> tuple[float, float, float]:
        """``(g, g', g'')`` by direct summation of the truncated series."""
        lam, C = self.lam, self.C
        terms = [lam**k / math.factorial(k) for k in range(C + 1)]
        g0 = math.fsum(terms)
        g1 = math.fsum(terms[: C])  # d/dlam lam^k/k! = lam^(k-1)/(k-1)!
        g2 = math.fsum(terms[: C - 1]) if C >= 2 else 0.0
        return g0, g1, g2

    def closed_form_moments(self) -> tuple[float, float]:
        """Mean ``lam g'/g`` and variance ``lam^2 g''/g + lam g'/g - (lam g'/g)^2``."""
        g0, g1, g2 = self.g_derivatives()
        m = self.lam * g1 / g0
        return m, self.lam**2 * g2 / g0 + m - m * m


@dataclass(frozen=True, eq=False)
class TiltSolution:
    params: AllocationParams
    lambda0: float
    law: TiltedPoisson


def _residual(lam: float, C: int, target: float, target_deficit: float) -> tuple[float, TiltedPoisson]:
    law = TiltedPoisson(lam, C)
    if target <= C / 2:
        return law.mean - target, law
    return target_deficit - law.deficit, law


def _solve_tilt(C: int, target: float, target_deficit: float) -> float:
    tol = SOLVER_RTOL * min(target, target_deficit)
    lo = hi = 1.0
    while _residual(hi, C, target, target_deficit)[0] < 0:
        lo, hi = hi, hi * 2.0
    while _residual(lo, C, target, target_deficit)[0] > 0:
        lo, hi = lo / 2.0, lo
    u_lo, u_hi = math.log(lo), math.log(hi)
    u = 0.5 * (u_lo + u_hi)
    for _ in range(_MAX_ITER):
        res, law = _residual(math.exp(u), C, target, target_deficit)
        if abs(res) <= tol:
            break
        if res < 0:
            u_lo = u
        else:
            u_hi = u
        if u_hi - u_lo <= 4 * np.finfo(float).eps * max(1.0, abs(u)):
            break
        step = u - res / law.variance
        u = step if u_lo < step < u_hi else 0.5 * (u_lo + u_hi)
    return math.exp(u)


def solve_lambda0(params: AllocationParams) -> TiltSolution:
    """Unique ``lam`` with ``E W(lam) = n / N``.

    Geometric bracketing followed by Newton steps in ``ln lam`` (slope = variance),
    falling back to bisection whenever a step leaves the bracket.
    """
    n, N, C = params.n, params.N, params.C
    if not params.interior:
        raise InfeasibleError(
            f"no interior tilt for n={n}, N={N}, C={C}: need 0 < n < C*N"
        )
    lam = _solve_tilt(C, n / N, (C * N - n) / N)
    return TiltSolution(params=params, lambda0=lam, law=TiltedPoisson(lam, C))


def lambda_for_mean_load(C: int, load: float) -> float:
    """Tilt whose conditioned-Poisson mean equals a real ``load`` in (0, C)."""
    if not 0 < load < C:
        raise InfeasibleError(f"mean load {load} must lie strictly inside (0, {C})")
    return _solve_tilt(C, load, C - load)


def balls_for_lambda(N: int, C: int, lam: float) -> int:
    """Ball count whose solved tilt is closest to ``lam`` (rounds ``N E W(lam)``)."""
    n = round(N * TiltedPoisson(lam, C).mean)
    return min(max(n, 1), C * N - 1)


def variance_expansion_check(law: TiltedPoisson) -> tuple[float, float]:
    """Exact ``var W`` and the two-term large-``lam`` expansion ``C/lam (1 + 2(C-2)/lam)``."""
    if law.lam < 1:
        raise ValueError(f"expansion is only meaningful for lam >= 1, got {law.lam}")
    C, lam = law.C, law.lam
    return law.variance, C / lam * (1 + 2 * (C - 2) / lam)


def llt_count_approx(params: AllocationParams, tilt: TiltSolution) -> float:
    """Local-limit estimate of ``ln M_n(N, C)``."""
    if tilt.params != params:
        raise ValueError("tilt was solved for different parameters")
    n, N = params.n, params.N
    law = tilt.law
    return (
        math.lgamma(n + 1)
        + N * law.log_g
        - n * math.log(tilt.lambda0)
        - 0.5 * math.log(2 * math.pi * N * law.variance)
    )


@dataclass(frozen=True)
class CapacityNoteRow:
    params: AllocationParams
    inv_lambda: float
    gap: float

    @property
    def ratio(self) -> float:
        return self.inv_lambda / self.gap


def lambda_capacity_note_check(params_seq: Iterable[AllocationParams]) -> list[CapacityNoteRow]:
    """``1/lam0`` next to ``1 - n/(C N)`` for loads approaching capacity."""
    rows = []
    for p in params_seq:
        if not (p.C - 1) * p.N < p.n < p.C * p.N:
            raise ValueError(f"n/N must lie in (C-1, C) for {p}")
        tilt = solve_lambda0(p)
        rows.append(CapacityNoteRow(p, 1.0 / tilt.lambda0, (p.C * p.N - p.n) / (p.C * p.N)))
    return rows
