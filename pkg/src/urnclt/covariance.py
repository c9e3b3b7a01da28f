"""Covariance matrices of occupancy counts, their square roots, and hypothesis diagnostics.

The asymptotic matrix is read off from the quadratic exponent of the factorial
moment approximation: with ``a_i = m_i - n/N`` and ``v = var W``,

    sigma_ii = mu_i + 2 mu_i^2 (-a_i^2 / (2 N v) - 1 / (2 N))
    sigma_ij = mu_i mu_j (-a_i a_j / (N v) - 1 / N),        i != j,

so that ``1/2 (k/mu)' (Sigma - diag(mu)) (k/mu)`` equals that exponent exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotPositiveDefiniteError
from .moments import OccupancyProfile, validate_levels
from .tilted import TiltedPoisson, TiltSolution

MAX_DIM = 64
JACOBI_TOL = 1e-14


def falling(C: int, k: int) -> int:
    return math.perm(C, k) if k <= C else 0


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix by cyclic two-sided Jacobi rotations.

    An entry is rotated away while ``|a_pq| > tol * sqrt(|a_pp a_qq|)``; sweeping
    until no entry qualifies keeps small eigenvalues of graded matrices accurate
    relative to their own size, not just to the norm.

    Returns eigenvalues in decreasing order and orthonormal eigenvectors as columns,
    each column signed so that its largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if not np.any(a):
        return np.zeros(n), v
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * math.sqrt(abs(a[p, p] * a[q, q])) or apq == 0.0:
                    continue
                rotated = True
                diff = float(a[q, q] - a[p, p])
                if abs(apq) < 1e-150 * abs(diff):
                    # theta = diff / (2 apq) would overflow; tan of the angle is apq / diff
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise RuntimeError("Jacobi sweeps did not converge")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    for i in range(n):
        if v[np.argmax(np.abs(v[:, i])), i] < 0:
            v[:, i] = -v[:, i]
    return w, v


def sym_sqrt(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Principal square root and inverse square root of a symmetric positive-definite matrix.

    Returns ``(sqrt, invsqrt, eigenvalues, eigenvectors)``.
    """
    s = np.array(matrix, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    if s.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {s.shape[0]} exceeds {MAX_DIM}")
    size = np.abs(s).max()
    if np.abs(s - s.T).max() > 1e-10 * max(size, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    s = 0.5 * (s + s.T)
    w, v = jacobi_eigh(s)
    if w[-1] <= 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: smallest eigenvalue {w[-1]:.6g}", float(w[-1])
        )
    root = np.sqrt(w)
    sqrt = (v * root) @ v.T
    invsqrt = (v / root) @ v.T
    return 0.5 * (sqrt + sqrt.T), 0.5 * (invsqrt + invsqrt.T), w, v


@dataclass(frozen=True, eq=False)
class CovModel:
    sigma: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sqrt: np.ndarray
    invsqrt: np.ndarray
    source: str = "matrix"

    @property
    def r(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def from_matrix(cls, sigma, source: str = "matrix") -> "CovModel":
        s = np.array(sigma, dtype=float)
        sqrt, invsqrt, w, v = sym_sqrt(s)
        return cls(0.5 * (s + s.T), w, v, sqrt, invsqrt, source)

    def residuals(self) -> tuple[float, float]:
        """Inf-norm residuals of the two square-root identities (first one relative)."""
        s = self.sigma
        inf = lambda x: np.abs(x).sum(axis=1).max()
        r1 = inf(self.sqrt @ self.sqrt - s) / inf(s)
        r2 = inf(self.invsqrt @ s @ self.invsqrt - np.eye(self.r))
        return float(r1), float(r2)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "sigma": self.sigma.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "sqrt": self.sqrt.tolist(),
            "invsqrt": self.invsqrt.tolist(),
        }


def sigma_matrix(m: Sequence[int], N: float, law: TiltedPoisson, load: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Asymptotic ``(Sigma, mu)`` for fill levels ``m`` at tilt ``law``.

    ``load`` is ``n/N``; it defaults to the law's mean, which is exact at the solved tilt.
    """
    m = validate_levels(m, law.C)
    if load is None:
        load = law.mean
    v = law.variance
    mu = np.array([N * float(law.pmf[mi]) for mi in m])
    a = np.array([mi - load for mi in m], dtype=float)
    sigma = -np.outer(mu, mu) * (np.outer(a, a) / (N * v) + 1.0 / N)
    diag = mu * (1.0 - mu * (a * a / (N * v) + 1.0 / N))
    sigma[np.diag_indices_from(sigma)] = diag
    return sigma, mu


def build_sigma(profile: OccupancyProfile, tilt: TiltSolution) -> CovModel:
    p = profile.params
    sigma, _ = sigma_matrix(profile.m, p.N, tilt.law, p.n / p.N)
    return CovModel.from_matrix(sigma, source="asymptotic")


def sigma_at_lambda(C: int, N: float, lam: float, m: Sequence[int]) -> tuple[CovModel, np.ndarray]:
    """Asymptotic model at an arbitrary tilt, with ``n/N`` set to the matching mean load."""
    law = TiltedPoisson(lam, C)
    sigma, mu = sigma_matrix(m, N, law)
    return CovModel.from_matrix(sigma, source="asymptotic"), mu


def moment_exponent(m: Sequence[int], k: Sequence[float], N: float, load: float, var: float) -> float:
    """Quadratic exponent of the factorial-moment approximation for order ``k``."""
    drift = sum(ki * (mi - load) for ki, mi in zip(k, m))
    s = sum(k)
    return -drift * drift / (2 * N * var) - s * s / (2 * N)


def quadratic_exponent(sigma: np.ndarray, mu: np.ndarray, k: Sequence[float]) -> float:
    """``1/2 (k/mu)' (Sigma - diag(mu)) (k/mu)``."""
    x = np.asarray(k, dtype=float) / mu
    return 0.5 * float(x @ (sigma - np.diag(mu)) @ x)


@dataclass(frozen=True)
class ClosedForm12:
    nu1: float
    nu2: float
    e1: np.ndarray
    e2: np.ndarray
    invsqrt_approx: np.ndarray
    A_n: np.ndarray
    scaled_sigma: np.ndarray


def closed_form_sigma12(C: int, N: float, lam: float) -> ClosedForm12:
    """Large-``lam`` eigenstructure of the covariance of ``(X_{C-1}, X_{C-2})``."""
    if C < 3:
        raise ValueError(f"the (C-1, C-2) closed forms need C >= 3, got C={C}")
    if lam < 10:
        raise ValueError(f"closed forms are asymptotic; need lam >= 10, got {lam}")
    c2, c3 = falling(C, 2), falling(C, 3)
    nu1 = 5 * c2 * N / lam**2
    nu2 = 9 * c3 * N / (5 * lam**3)
    e1 = np.array([2.0, -1.0]) / math.sqrt(5)
    e2 = np.array([1.0, 2.0]) / math.sqrt(5)
    a1, a2 = nu1**-0.5, nu2**-0.5
    approx = np.array(
        [
            [0.8 * a1 + 0.2 * a2, -0.4 * a1 + 0.4 * a2],
            [-0.4 * a1 + 0.4 * a2, 0.2 * a1 + 0.8 * a2],
        ]
    )
    h = math.sqrt(C - 2) / (5 * math.sqrt(lam))
    A_n = lam**1.5 / (3 * math.sqrt(5 * c3 * N)) * np.array(
        [[1 + 12 * h, 2 - 6 * h], [2 - 6 * h, 4 + 3 * h]]
    )
    scaled = np.array(
        [
            [4 - (11 * C + 2) / lam, -2 + (10 * C - 8) / lam],
            [-2 + (10 * C - 8) / lam, 1 - (5 * C - 4) / lam],
        ]
    )
    return ClosedForm12(nu1, nu2, e1, e2, approx, A_n, scaled)


@dataclass(frozen=True)
class ClosedForm123:
    nu1: float
    nu2: float
    nu3: float
    approx_sigma: np.ndarray


def closed_form_sigma123(C: int, N: float, lam: float) -> ClosedForm123:
    """Large-``lam`` eigenvalues for ``(X_{C-1}, X_{C-2}, X_{C-3})``."""
    if C < 4:
        raise ValueError(f"the (C-1, C-2, C-3) closed forms need C >= 4, got C={C}")
    if lam < 10:
        raise ValueError(f"closed forms are asymptotic; need lam >= 10, got {lam}")
    c2, c3, c4 = falling(C, 2), falling(C, 3), falling(C, 4)
    nu1 = c2 * N / lam**2 * (5 - (89 * C - 28) / (5 * lam))
    nu2 = 14 * c3 * N / (5 * lam**3)
    nu3 = 8 * c4 * N / (7 * lam**4)
    off13 = -3 * (C - 2) / lam
    off23 = -6 * falling(C - 1, 2) / lam**2
    approx = c2 * N / lam**2 * np.array(
        [
            [4 - (11 * C + 2) / lam, -2 + (10 * C - 8) / lam, off13],
            [-2 + (10 * C - 8) / lam, 1 - (5 * C - 4) / lam, off23],
            [off13, off23, 1 / lam],
        ]
    )
    return ClosedForm123(nu1, nu2, nu3, approx)


def diagonal_regime_sigma(profile: OccupancyProfile) -> CovModel:
    """``Sigma = diag(mu)`` for profiles that avoid the two top fill levels."""
    C = profile.params.C
    if any(mi > C - 2 for mi in profile.m):
        raise ValueError(
            f"diagonal model needs every level <= C-2={C - 2}; use build_sigma for {profile.m}"
        )
    mu = profile.mu_array()
    if mu.min() < 30:
        warnings.warn(
            f"smallest mean {mu.min():.3g} < 30; diagonal model is far from its regime",
            stacklevel=2,
        )
    root = np.sqrt(mu)
    return CovModel(
        sigma=np.diag(mu),
        eigenvalues=np.sort(mu)[::-1],
        eigenvectors=np.eye(len(mu))[:, np.argsort(-mu, kind="stable")],
        sqrt=np.diag(root),
        invsqrt=np.diag(1.0 / root),
        source="diagonal",
    )


def offdiagonal_exponent_bound(lam: float, i: int, j: int) -> float:
    """Order of the off-diagonal exponent term ``lam^(1 - (i+j)/2)`` for levels ``C-i``, ``C-j``."""
    return lam ** (1 - (i + j) / 2)


@dataclass(frozen=True)
class ConditionReport:
    q: np.ndarray
    qmu: np.ndarray
    max: np.ndarray
    extra: np.ndarray
    k_domain_lo: np.ndarray
    k_domain_hi: np.ndarray

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in ("q", "qmu", "max", "extra", "k_domain_lo", "k_domain_hi")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_conditions(model: CovModel, mu, c1: float = -2.0, c2: float = 2.0) -> ConditionReport:
    """Finite-instance values of the quantities the limit theorem needs to vanish.

    ``qmu_i = q_i / mu_i``, ``max_i = max_j |s~_ij| q_i^2 / mu_i`` and
    ``extra_i = max_j |s~_ij| mu_i^(1/3)``, with ``q_i = max_j |s_ij|``.  The
    domain is the per-coordinate range of ``diag(mu) Sigma^(-1/2) [c1, c2]^r``.
    """
    if not c1 < c2:
        raise ValueError(f"need c1 < c2, got {c1}, {c2}")
    mu = np.asarray(mu, dtype=float)
    q = np.abs(model.sqrt).max(axis=1)
    st = np.abs(model.invsqrt).max(axis=1)
    rows = mu[:, None] * model.invsqrt
    lo = np.minimum(rows * c1, rows * c2).sum(axis=1)
    hi = np.maximum(rows * c1, rows * c2).sum(axis=1)
    return ConditionReport(q, q / mu, st * q**2 / mu, st * mu ** (1 / 3), lo, hi)


@dataclass(frozen=True)
class GammaFactorization:
    sigma_vec: np.ndarray
    gamma: np.ndarray
    min_eigenvalue: float
    invertible: bool


def fixed_gamma_factorization(model: CovModel, threshold: float = 1e-6) -> GammaFactorization:
    """Split ``Sigma = diag(s) Gamma diag(s)`` with ``Gamma`` the correlation matrix."""
    s = np.sqrt(np.diag(model.sigma))
    gamma = model.sigma / np.outer(s, s)
    gamma = 0.5 * (gamma + gamma.T)
    np.fill_diagonal(gamma, 1.0)
    w, _ = jacobi_eigh(gamma)
    return GammaFactorization(s, gamma, float(w[-1]), bool(w[-1] > threshold))
