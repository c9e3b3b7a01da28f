"""Exact sampling of occupancy histograms and empirical normality checks.

Two exact samplers are provided:

* ``sequential-exact`` fills bins one at a time; with ``s`` balls left for ``j``
  bins the current bin takes ``k`` balls with probability
  ``binom(s, k) M_{s-k}(j-1) / M_s(j)``, read from a full log-domain count table.
* ``rejection`` draws the histogram of ``N`` i.i.d. truncated-Poisson loads at the
  solved tilt (a multinomial over ``0..C``) and keeps it when the loads sum to ``n``.
  Conditioned on that event the histogram has exactly the uniform-placement law.

Randomness: sample ``i`` draws from Philox4x64 with ``key = seed`` and counter
``i * 2**64``, so every sample owns a fixed substream and results do not depend
on block size or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .covariance import CovModel
from .errors import BudgetError
from .moments import validate_levels
from .occupancy import AllocationParams, CountTable, log_count_table
from .tilted import TiltSolution, solve_lambda0

METHODS = ("sequential-exact", "rejection")
TABLE_BUDGET = 10**9
ATTEMPT_BUDGET = 10**9
BLOCK = 2048


@dataclass(frozen=True)
class SamplerConfig:
    params: AllocationParams
    method: str = "sequential-exact"
    seed: int = 0
    samples: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampler {self.method!r}; choose from {METHODS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if self.samples < 1:
            raise ValueError(f"samples must be positive, got {self.samples}")
        if self.workers < 1:
            raise ValueError(f"workers must be positive, got {self.workers}")
        self.params.require_feasible()


@dataclass(frozen=True, eq=False)
class SampleBatch:
    config: SamplerConfig
    m: tuple[int, ...]
    histograms: np.ndarray = field(repr=False)
    attempts: int | None = None
    standardized: np.ndarray | None = field(default=None, repr=False)
    standardized_mean: np.ndarray | None = None

    @property
    def raw(self) -> np.ndarray:
        """Occupancy counts ``X_{m_i}``, one row per sample."""
        return self.histograms[:, list(self.m)]

    @property
    def acceptance_rate(self) -> float | None:
        if self.attempts is None:
            return None
        return self.config.samples / self.attempts

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"X_{mi}" for mi in self.m]
        if self.standardized is not None:
            header += [f"Z_{i + 1}" for i in range(len(self.m))]
        w.writerow(header)
        raw = self.raw
        for idx in range(raw.shape[0]):
            row = [int(x) for x in raw[idx]]
            if self.standardized is not None:
                row += [repr(float(z)) for z in self.standardized[idx]]
            w.writerow(row)
        return buf.getvalue()


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=index << 64))


def _blocks(samples: int) -> list[range]:
    return [range(a, min(samples, a + BLOCK)) for a in range(0, samples, BLOCK)]


def _run_blocks(fn, config: SamplerConfig):
    blocks = _blocks(config.samples)
    if config.workers == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(fn, blocks))


def _sequential_block(table: CountTable, seed: int, block: range, loads: np.ndarray | None = None) -> np.ndarray:
    n, N, C = table.params.n, table.params.N, table.params.C
    logp = table.data
    log_pmf = table.log_pmf
    size = len(block)
    u = np.stack([sample_rng(seed, i).random(N) for i in block])
    left = np.full(size, n, dtype=np.int64)
    hist = np.zeros((size, C + 1), dtype=np.int64)
    rows = np.arange(size)
    ks = np.arange(C + 1)
    for step in range(N):
        j = N - step
        here = logp[j][left]
        src = left[None, :] - ks[:, None]
        valid = src >= 0
        prev = np.where(valid, logp[j - 1][np.clip(src, 0, n)], -np.inf)
        probs = np.exp(prev + log_pmf[:, None] - here[None, :])
        cum = np.cumsum(probs, axis=0)
        k = (cum <= u[:, step][None, :]).sum(axis=0)
        top = C - np.argmax(probs[::-1] > 0, axis=0)
        k = np.minimum(k, top)
        hist[rows, k] += 1
        if loads is not None:
            loads[:, step] = k
        left -= k
    if np.any(left != 0):
        raise RuntimeError("sequential sampler failed to place every ball")
    return hist


def sample_sequential_exact(config: SamplerConfig, m: Sequence[int], table: CountTable | None = None) -> SampleBatch:
    """Exact samples via the bin-by-bin conditional law."""
    if config.method != "sequential-exact":
        raise ValueError(f"config asks for {config.method!r}")
    p = config.params
    levels = validate_levels(m, p.C)
    work = p.N * (p.n + 1) * p.C
    if work > TABLE_BUDGET:
        raise BudgetError(f"sequential sampler needs N*n*C = {work} table work; limit {TABLE_BUDGET}")
    if table is None:
        table = log_count_table(p)
    if table.mode != "log" or table.first_bin != 0 or table.params != p:
        raise ValueError("sequential sampler needs a full log-domain table for the same parameters")
    parts = _run_blocks(lambda b: _sequential_block(table, config.seed, b), config)
    return SampleBatch(config, levels, np.concatenate(parts))


def sample_bin_loads(config: SamplerConfig, table: CountTable | None = None) -> np.ndarray:
    """Per-bin loads ``(samples, N)`` from the sequential sampler, same streams as the histograms."""
    p = config.params
    if p.N * config.samples > TABLE_BUDGET:
        raise BudgetError(f"load matrix of {p.N * config.samples} entries exceeds {TABLE_BUDGET}")
    if table is None:
        table = log_count_table(p)
    out = np.empty((config.samples, p.N), dtype=np.int64)
    for b in _blocks(config.samples):
        _sequential_block(table, config.seed, b, out[b.start : b.stop])
    return out


def rejection_batch_size(acceptance: float) -> int:
    return int(min(65536, max(4, math.ceil(2.0 / acceptance))))


def llt_acceptance(tilt: TiltSolution) -> float:
    """Local-limit estimate ``1 / sqrt(2 pi N var W)`` of the rejection acceptance rate."""
    return 1.0 / math.sqrt(2 * math.pi * tilt.params.N * tilt.law.variance)


def _rejection_block(params: AllocationParams, pmf: np.ndarray, batch: int, seed: int, block: range):
    n, N, C = params.n, params.N, params.C
    weights = np.arange(C + 1)
    out = np.empty((len(block), C + 1), dtype=np.int64)
    attempts = 0
    for row, i in enumerate(block):
        rng = sample_rng(seed, i)
        while True:
            draws = rng.multinomial(N, pmf, size=batch)
            hit = np.flatnonzero(draws @ weights == n)
            if hit.size:
                out[row] = draws[hit[0]]
                attempts += int(hit[0]) + 1
                break
            attempts += batch
    return out, attempts


def sample_rejection(config: SamplerConfig, m: Sequence[int], tilt: TiltSolution | None = None) -> SampleBatch:
    """Exact samples by conditioning i.i.d. tilted loads on their total."""
    if config.method != "rejection":
        raise ValueError(f"config asks for {config.method!r}")
    p = config.params
    levels = validate_levels(m, p.C)
    if tilt is None:
        tilt = solve_lambda0(p)
    acc = llt_acceptance(tilt)
    projected = config.samples / acc
    if projected > ATTEMPT_BUDGET:
        raise BudgetError(
            f"rejection sampler projects {projected:.3g} attempts; limit {ATTEMPT_BUDGET}"
        )
    pmf = tilt.law.pmf / tilt.law.pmf.sum()
    batch = rejection_batch_size(acc)
    parts = _run_blocks(lambda b: _rejection_block(p, pmf, batch, config.seed, b), config)
    hist = np.concatenate([h for h, _ in parts])
    attempts = sum(a for _, a in parts)
    return SampleBatch(config, levels, hist, attempts=attempts)


def draw(config: SamplerConfig, m: Sequence[int], table: CountTable | None = None, tilt: TiltSolution | None = None) -> SampleBatch:
    if config.method == "sequential-exact":
        return sample_sequential_exact(config, m, table)
    return sample_rejection(config, m, tilt)


def standardize(batch: SampleBatch, model: CovModel, mu) -> SampleBatch:
    """Apply ``Sigma^(-1/2) (X - mu)`` to every sample."""
    mu = np.asarray(mu, dtype=float)
    r = len(batch.m)
    if model.r != r or mu.shape != (r,):
        raise ValueError(f"model of dimension {model.r} and mean of shape {mu.shape} do not match {r} levels")
    z = (batch.raw - mu) @ model.invsqrt.T
    mean = np.array([math.fsum(z[:, i]) / z.shape[0] for i in range(r)])
    return replace(batch, standardized=z, standardized_mean=mean)


def compensated_cov(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and (1/n-normalised) covariance of the rows of ``z`` using ``math.fsum``."""
    n, r = z.shape
    mean = np.array([math.fsum(z[:, i]) / n for i in range(r)])
    d = z - mean
    cov = np.empty((r, r))
    for i in range(r):
        for j in range(i, r):
            cov[i, j] = cov[j, i] = math.fsum(d[:, i] * d[:, j]) / n
    return mean, cov


def normality_report(z, min_samples: int = 1000) -> dict:
    """KS distances to N(0,1), covariance deviation from I, and mean squared norm.

    Accepts a standardized :class:`SampleBatch` or a plain ``(samples, r)`` array.
    """
    if isinstance(z, SampleBatch):
        if z.standardized is None:
            raise ValueError("batch has not been standardized")
        z = z.standardized
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n, r = z.shape
    if n < min_samples:
        raise ValueError(f"normality report needs at least {min_samples} samples, got {n}")
    ks = [float(stats.kstest(z[:, i], "norm").statistic) for i in range(r)]
    mean, cov = compensated_cov(z)
    gate = 2 * 1.36 / math.sqrt(n)
    return {
        "samples": n,
        "ks": ks,
        "ks_gate": gate,
        "ks_flagged": [d > gate for d in ks],
        "mean": mean.tolist(),
        "cov": cov.tolist(),
        "cov_max_dev": float(np.abs(cov - np.eye(r)).max()),
        "sq_norm_mean": math.fsum(np.sum(z * z, axis=1)) / n,
    }


def normality_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
