"""Rank recovery, equicorrelated Gaussian copula, innovation covariance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .basis import SplineBasis

log = logging.getLogger(__name__)

RANK_FLOOR = 1e-4
RANK_CEIL = 1.0 - 1e-4


class NonInvertibleCurve(ValueError):
    pass


@dataclass(frozen=True)
class CopulaModel:
    """Gaussian copula whose correlation matrix has every off-diagonal equal to ``kappa``."""

    kappa: float
    n: int
    loglik: float = float("nan")
    at_boundary: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("copula dimension must be positive")
        lo = -1.0 / (self.n - 1) if self.n > 1 else -1.0
        if not lo < self.kappa < 1.0:
            raise ValueError(f"kappa={self.kappa} outside ({lo}, 1)")

    def corr(self) -> np.ndarray:
        R = np.full((self.n, self.n), self.kappa)
        np.fill_diagonal(R, 1.0)
        return R

    def sample_scores(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Standard-normal scores with the copula correlation, shape ``(size, n)``."""
        L = np.linalg.cholesky(self.corr())
        return rng.standard_normal((size, self.n)) @ L.T

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform ranks, shape ``(size, n)``."""
        return stats.norm.cdf(self.sample_scores(rng, size))

    def conditional_factor(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Regression weights and Cholesky factor of the other scores given score ``j``."""
        R = self.corr()
        others = [i for i in range(self.n) if i != j]
        r = R[others, j]
        S = R[np.ix_(others, others)] - np.outer(r, r)
        return r, np.linalg.cholesky(S)

    def to_dict(self) -> dict:
        return {"family": "gaussian-equicorrelation", "kappa": self.kappa, "n": self.n,
                "loglik": self.loglik, "at_boundary": self.at_boundary}


def copula_loglik(kappa: float, Z: np.ndarray) -> float:
    """Gaussian equicorrelation copula log-likelihood of normal scores ``Z`` (T x n)."""
    T, n = Z.shape
    one_minus = 1.0 - kappa
    big = 1.0 + (n - 1) * kappa
    logdet = (n - 1) * np.log(one_minus) + np.log(big)
    sq = np.sum(Z * Z, axis=1)
    sm = np.sum(Z, axis=1)
    quad = (sq - kappa / big * sm * sm) / one_minus
    return float(-0.5 * T * logdet - 0.5 * np.sum(quad - sq))


def fit_gaussian_copula(ranks: np.ndarray) -> CopulaModel:
    """Maximum-likelihood equicorrelation from an ``n x T`` rank matrix."""
    U = np.asarray(ranks, dtype=float)
    n, T = U.shape
    if n < 2:
        raise ValueError("copula fitting needs at least two series")
    if T < 10:
        raise ValueError("copula fitting needs at least 10 observations")
    if np.any(np.ptp(U, axis=1) == 0):
        raise ValueError("degenerate ranks: a series is constant")
    Z = stats.norm.ppf(np.clip(U, 1e-12, 1 - 1e-12)).T
    lo = -1.0 / (n - 1) + 1e-4
    hi = 1.0 - 1e-4
    res = optimize.minimize_scalar(lambda k: -copula_loglik(k, Z), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10})
    cands = [(float(res.x), -float(res.fun)), (lo, copula_loglik(lo, Z)),
             (hi, copula_loglik(hi, Z)), (0.0, copula_loglik(0.0, Z))]
    kappa, ll = max(cands, key=lambda c: c[1])
    boundary = kappa in (lo, hi) or min(kappa - lo, hi - kappa) < 1e-6
    if boundary:
        log.warning("copula MLE on the boundary of the parameter box (kappa=%.6f)", kappa)
    return CopulaModel(kappa=kappa, n=n, loglik=ll, at_boundary=boundary)


def quantile_curve(gamma: np.ndarray, basis: SplineBasis, coords: np.ndarray, taus) -> np.ndarray:
    """``c^T gamma b(tau)`` for one coordinate vector ``c`` and many levels."""
    return basis.design(taus) @ (gamma.T @ coords)


@dataclass
class RankResult:
    u: float
    clamped: bool


def recover_rank(gamma: np.ndarray, basis: SplineBasis, coords: np.ndarray, y: float,
                 scale: float = 1.0) -> RankResult:
    """Invert ``tau -> c^T gamma b(tau)`` at ``y`` by bisection."""
    out = recover_ranks(gamma, basis, np.atleast_2d(coords), np.atleast_1d(y), scale)
    return RankResult(float(out[0][0]), bool(out[1][0]))


def recover_ranks(gamma: np.ndarray, basis: SplineBasis, coords: np.ndarray, y: np.ndarray,
                  scale: float = 1.0, tol: float = 1e-8):
    """Vectorized bisection over rows of ``coords`` (m x (N+1)).

    Returns ``(u, clamped)`` arrays.  Values below the curve at the rank floor
    (or above it at the ceiling) are clamped to the band and flagged.
    """
    coords = np.asarray(coords, dtype=float)
    y = np.asarray(y, dtype=float)
    weights = coords @ gamma  # (m, H): coefficients of the curve in the basis
    lo_val = weights @ basis.design([RANK_FLOOR])[0]
    hi_val = weights @ basis.design([RANK_CEIL])[0]
    if np.any(hi_val - lo_val <= 0):
        raise NonInvertibleCurve("non-invertible quantile curve (zero slope)")
    lo = np.full(y.shape, RANK_FLOOR)
    hi = np.full(y.shape, RANK_CEIL)
    below = y <= lo_val
    above = y >= hi_val
    thr = tol * scale
    inside = ~(below | above)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = np.einsum("mh,mh->m", weights, basis.design(mid))
        go_up = val < y
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
        if np.all(np.abs(val - y)[inside] <= thr) or np.all(hi - lo < 1e-15):
            break
    u = 0.5 * (lo + hi)
    u = np.where(below, RANK_FLOOR, np.where(above, RANK_CEIL, u))
    return u, below | above


@dataclass
class RankMatrix:
    u_hat: np.ndarray
    clamped: np.ndarray = field(default=None)

    @property
    def n_clamped(self) -> int:
        return 0 if self.clamped is None else int(self.clamped.sum())


def recover_rank_matrix(fits, coords: np.ndarray, responses: np.ndarray,
                        basis: SplineBasis) -> RankMatrix:
    """Ranks for every equation and in-sample time point, ``n x T_eff``."""
    n = responses.shape[1]
    U = np.empty((n, responses.shape[0]))
    C = np.zeros_like(U, dtype=bool)
    for i in range(n):
        scale = max(float(np.ptp(responses[:, i])), 1e-12)
        U[i], C[i] = recover_ranks(fits[i].gamma, basis, coords, responses[:, i], scale)
    if C.any():
        log.info("%d rank values clamped to the band", int(C.sum()))
    return RankMatrix(U, C)


@dataclass
class InnovationEstimates:
    eps_hat: np.ndarray
    mu_hat: np.ndarray
    cov_hat: np.ndarray


def innovation_covariance(theta0_funcs, ranks: RankMatrix | np.ndarray) -> InnovationEstimates:
    """Innovations ``theta0_i(U_it) - mean`` and their (1/T) covariance.

    ``theta0_funcs`` is a sequence of callables, one per equation, each mapping
    an array of ranks to intercept-curve values.
    """
    U = ranks.u_hat if isinstance(ranks, RankMatrix) else np.asarray(ranks, dtype=float)
    vals = np.vstack([np.asarray(f(U[i]), dtype=float) for i, f in enumerate(theta0_funcs)])
    mu = vals.mean(axis=1)
    eps = vals - mu[:, None]
    cov = eps @ eps.T / eps.shape[1]
    return InnovationEstimates(eps_hat=eps, mu_hat=mu, cov_hat=0.5 * (cov + cov.T))
