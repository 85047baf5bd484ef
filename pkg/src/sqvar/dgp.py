"""Data-generating processes for validation and the stationarity check."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .innovation import RANK_CEIL, RANK_FLOOR, CopulaModel
from .panel import SeriesBounds, TimeSeriesPanel
from .simplex import CoordinateSystem

log = logging.getLogger(__name__)

Curve = Callable[[np.ndarray], np.ndarray]


class NonStationaryError(RuntimeError):
    pass


@dataclass
class CoefficientFunctions:
    """QVAR coefficient curves.

    ``theta[i][k]`` is the curve multiplying lag slot ``k`` (design order: lag
    block, then series) in equation ``i``; ``None`` marks an inactive slot.
    """

    n: int
    p: int
    theta0: Sequence[Curve]
    theta: Sequence[Sequence[Optional[Curve]]]
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.n * self.p
        if len(self.theta0) != self.n or len(self.theta) != self.n:
            raise ValueError("need one intercept curve and one lag row per equation")
        if any(len(row) != N for row in self.theta):
            raise ValueError(f"each equation needs {N} lag slots")

    @property
    def N(self) -> int:
        return self.n * self.p

    @property
    def active_mask(self) -> np.ndarray:
        return np.array([[f is not None for f in row] for row in self.theta])

    def active_set(self, i: int) -> set:
        """Active ``(series, lag)`` pairs of equation ``i`` (0-based series, 1-based lag)."""
        return {(k % self.n, k // self.n + 1) for k in np.flatnonzero(self.active_mask[i])}

    def evaluate(self, U: np.ndarray):
        """Intercepts ``(m, n)`` and lag coefficients ``(m, n, N)`` at ranks ``U (m, n)``."""
        U = np.atleast_2d(U)
        m = U.shape[0]
        th0 = np.empty((m, self.n))
        A = np.zeros((m, self.n, self.N))
        for i in range(self.n):
            th0[:, i] = self.theta0[i](U[:, i])
            for k, f in enumerate(self.theta[i]):
                if f is not None:
                    A[:, i, k] = f(U[:, i])
        return th0, A

    def on_grid(self, i: int, taus) -> tuple[np.ndarray, np.ndarray]:
        """``theta0_i`` (K,) and lag curves (N, K) of equation ``i`` at ``taus``."""
        taus = np.asarray(taus, dtype=float)
        th = np.zeros((self.N, taus.size))
        for k, f in enumerate(self.theta[i]):
            if f is not None:
                th[k] = f(taus)
        return np.asarray(self.theta0[i](taus), float), th


@dataclass
class StationarityReport:
    rho: float
    condition_met: bool
    grid_size: int
    per_lag: list

    def to_dict(self) -> dict:
        return {"rho": self.rho, "condition_met": self.condition_met,
                "grid_size": self.grid_size, "per_lag": self.per_lag}


def _sup_spectral(rows: np.ndarray, rng: np.random.Generator) -> float:
    """``sup_u ||A(u)||_2`` where row ``i`` of ``A`` is ``rows[i, u_i]`` (rows: n x G x n)."""
    n, G, _ = rows.shape
    if G**n <= 200_000:
        idx = np.stack(np.meshgrid(*[np.arange(G)] * n, indexing="ij"), -1).reshape(-1, n)
        mats = rows[np.arange(n)[None, :], idx]  # (G^n, n, n)
        return float(np.max(np.linalg.norm(mats, ord=2, axis=(1, 2))))
    # alternating ascent: each step can only increase ||A(u) x|| for the current top vector x
    best = 0.0
    starts = [np.zeros(n, int), np.full(n, G - 1), np.full(n, G // 2)]
    starts += [rng.integers(0, G, n) for _ in range(20)]
    for u in starts:
        prev = -1.0
        for _ in range(100):
            A = rows[np.arange(n), u]
            _, s, vt = np.linalg.svd(A)
            if s[0] <= prev + 1e-14:
                break
            prev = s[0]
            x = vt[0]
            u = np.argmax(np.abs(rows @ x), axis=1)
        best = max(best, prev)
    return best


def check_stationarity(coefs: CoefficientFunctions, u_grid_size: int = 101,
                       seed: int = 0) -> StationarityReport:
    """Sufficient stationarity condition ``sum_j sup_u ||A_j(u)||_2 < 1/p``."""
    if u_grid_size < 11:
        raise ValueError("grid size must be at least 11")
    # uniform grid, endpoints pulled into the rank band where curves stay finite
    grid = np.clip(np.linspace(0.0, 1.0, u_grid_size), RANK_FLOOR, RANK_CEIL)
    n, p = coefs.n, coefs.p
    rng = np.random.default_rng(seed)
    per_lag = []
    for j in range(1, p + 1):
        rows = np.zeros((n, u_grid_size, n))
        for i in range(n):
            for l in range(n):
                f = coefs.theta[i][(j - 1) * n + l]
                if f is not None:
                    rows[i, :, l] = f(grid)
        per_lag.append(_sup_spectral(rows, rng) if np.any(rows) else 0.0)
    rho = float(sum(per_lag))
    return StationarityReport(rho=rho, condition_met=rho < 1.0 / p, grid_size=u_grid_size,
                              per_lag=per_lag)


def companion(A: np.ndarray) -> np.ndarray:
    """Stacked first-order matrix for lag coefficients ``A`` of shape (n, N)."""
    n, N = A.shape
    M = np.zeros((N, N))
    M[:n] = A
    M[n:, :-n] = np.eye(N - n)
    return M


def companion_norms(coefs: CoefficientFunctions, U: np.ndarray) -> np.ndarray:
    """``||Gamma_{t,k}||_2`` for ``k = 0..K`` along ranks ``U`` (K, n), most recent first.

    ``Gamma_{t,k}`` is the product of the first ``k`` companion matrices.
    """
    _, A = coefs.evaluate(np.asarray(U, dtype=float))
    P = np.eye(coefs.N)
    out = [1.0]
    for M in A:
        P = P @ companion(M)
        out.append(float(np.linalg.norm(P, 2)))
    return np.array(out)


def random_affine_coefficients(n: int, p: int, rho: float, rng: np.random.Generator,
                               grid: int = 101) -> CoefficientFunctions:
    """Random curves ``a + b u`` for every lag slot, rescaled so the stationarity ``rho`` is hit."""
    N = n * p
    a = rng.normal(size=(n, N))
    b = rng.normal(size=(n, N))

    def curve(i, k, scale):
        return lambda u: scale * (a[i, k] + b[i, k] * np.asarray(u, dtype=float))

    def build(scale):
        theta = [[curve(i, k, scale) for k in range(N)] for i in range(n)]
        return CoefficientFunctions(n=n, p=p, theta0=[stats.norm.ppf] * n, theta=theta,
                                    description={"dgp": "random-affine", "rho": rho})

    raw = check_stationarity(build(1.0), grid).rho
    return build(rho / raw)


def simulate_qvar(coefs: CoefficientFunctions, copula: CopulaModel, T: int,
                  burn_in: int = 500, seed: int = 0, init: np.ndarray | None = None,
                  check: bool = True) -> TimeSeriesPanel:
    """Draw ranks from the copula and run the random-coefficient recursion."""
    if T < 1:
        raise ValueError("T must be positive")
    if burn_in < 100:
        log.warning("burn-in of %d steps is short", burn_in)
    if copula.n != coefs.n:
        raise ValueError("copula dimension does not match the model")
    if check:
        rep = check_stationarity(coefs, 21)
        if not rep.condition_met:
            log.warning("stationarity condition not met (rho=%.3f, p=%d)", rep.rho, coefs.p)
    rng = np.random.default_rng(seed)
    total = T + burn_in
    U = copula.sample(rng, total)
    th0, A = coefs.evaluate(U)
    n, p = coefs.n, coefs.p
    lags = np.zeros(n * p) if init is None else np.asarray(init, float).reshape(-1).copy()
    out = np.empty((total, n))
    for t in range(total):
        y = th0[t] + A[t] @ lags
        if not np.all(np.abs(y) < 1e8):
            raise NonStationaryError(
                f"simulated path diverged at step {t}; "
                f"rho={check_stationarity(coefs, 21).rho:.3f}, need < {1.0 / p:.3f}")
        out[t] = y
        lags = np.concatenate([y, lags[:-n]])
    return TimeSeriesPanel(out[burn_in:].T)


def _beta22_ppf(tau):
    return stats.beta.ppf(tau, 2, 2)


def study1_dgp(b: int = 1) -> tuple[CoefficientFunctions, CopulaModel]:
    """Trivariate QVAR(2) with active first lags and inactive second lags."""
    if b not in range(1, 7):
        raise ValueError("b must be an integer in 1..6")
    th0 = lambda u: 1.0 + _beta22_ppf(u)
    lag1 = [
        lambda u: (0.1 * u + 0.2 * np.sqrt(u)) / b,
        lambda u: (0.1 * u + 0.2 * _beta22_ppf(u)) / b,
        lambda u: (0.1 * u + 0.2 * u**2) / b,
    ]
    row = lag1 + [None, None, None]
    coefs = CoefficientFunctions(n=3, p=2, theta0=[th0] * 3, theta=[list(row) for _ in range(3)],
                                 description={"dgp": "study1", "b": b})
    return coefs, CopulaModel(kappa=0.3, n=3)


STUDY2_PHI0 = lambda u: stats.norm.ppf(u, scale=0.2)
STUDY2_PHI1 = [
    lambda u: 3 * u + 6 * np.sqrt(u),
    lambda u: 3 * u + 6 * stats.norm.cdf(2 * u - 1),
    lambda u: 3 * u + 6 * u**2,
]


@dataclass
class Study2Result:
    panel: TimeSeriesPanel
    coefs: CoefficientFunctions
    bounds: SeriesBounds
    steps_to_stable: int


def _phi_eval(u: np.ndarray) -> np.ndarray:
    """SQVAR curves at ranks ``u`` (n,), shape (n, N+1): phi_0 then the six vertex curves."""
    n, p = 3, 2
    vals = np.empty((n, n * p + 1))
    p0 = STUDY2_PHI0(u)
    vals[:, 0] = p0
    for l in range(n):
        vals[:, 1 + l] = STUDY2_PHI1[l](u)
        vals[:, 1 + n + l] = p0
    return vals


def study2_coefficients(bounds: SeriesBounds) -> CoefficientFunctions:
    """QVAR curves implied by the study-2 SQVAR curves under fixed bounds."""
    cs = CoordinateSystem(bounds, p=2)
    n = 3
    scale = cs.scale_rep
    lb = cs.lb_rep

    def lag_curve(l):
        s = scale[l]
        return lambda u: (STUDY2_PHI1[l](u) - STUDY2_PHI0(u)) / s

    curves = [lag_curve(l) for l in range(n)]

    def th0(u):
        return STUDY2_PHI0(u) - sum(lb[l] * curves[l](u) for l in range(n))

    row = curves + [None] * n
    return CoefficientFunctions(n=n, p=2, theta0=[th0] * n, theta=[list(row) for _ in range(n)],
                                description={"dgp": "study2", "lb": bounds.lb.tolist(),
                                             "ub": bounds.ub.tolist()})


def study2_dgp(T: int, seed: int = 0, copula: CopulaModel | None = None,
               stable_window: int = 500, stable_tol: float = 1e-6,
               max_steps: int = 100_000) -> Study2Result:
    """Generate from the study-2 SQVAR curves with running empirical bounds.

    Bounds track the running min/max and are refreshed every step until they
    move by less than ``stable_tol`` over ``stable_window`` consecutive steps;
    they are then frozen, the implied QVAR curves fixed, and ``T`` further
    observations kept.
    """
    copula = copula or CopulaModel(kappa=0.3, n=3)
    rng = np.random.default_rng(seed)
    n, p = 3, 2
    hist = [STUDY2_PHI0(copula.sample(rng, 1)[0]) for _ in range(p + 1)]
    data = np.array(hist)
    lb, ub = data.min(axis=0), data.max(axis=0)
    quiet = 0
    steps = 0
    lags = np.concatenate([data[-1], data[-2]])
    while quiet < stable_window:
        if steps >= max_steps:
            raise NonStationaryError(f"bounds did not stabilize within {max_steps} steps")
        cs = CoordinateSystem(SeriesBounds(lb, ub), p)
        c = cs.coordinates(np.r_[1.0, lags][None, :])[0]
        u = copula.sample(rng, 1)[0]
        y = _phi_eval(u) @ c
        new_lb, new_ub = np.minimum(lb, y), np.maximum(ub, y)
        moved = max(np.max(np.abs(new_lb - lb)), np.max(np.abs(new_ub - ub)))
        quiet = quiet + 1 if moved < stable_tol else 0
        lb, ub = new_lb, new_ub
        lags = np.concatenate([y, lags[:-n]])
        steps += 1
    bounds = SeriesBounds(lb, ub)
    coefs = study2_coefficients(bounds)
    # continue the same path under the frozen coefficients
    U = copula.sample(rng, T)
    th0, A = coefs.evaluate(U)
    out = np.empty((T, n))
    for t in range(T):
        y = th0[t] + A[t] @ lags
        out[t] = y
        lags = np.concatenate([y, lags[:-n]])
    return Study2Result(panel=TimeSeriesPanel(out.T), coefs=coefs, bounds=bounds,
                        steps_to_stable=steps)


def crossing_frequency(Q: np.ndarray) -> float:
    """Average over rows of the number of adjacent decreases along each row.

    ``Q`` holds conditional quantile curves, shape ``(T, K)`` with columns at
    increasing levels (normally ``k/100``).
    """
    Q = np.atleast_2d(Q)
    return float(np.mean(np.sum(Q[:, :-1] > Q[:, 1:], axis=1)))


def describe(coefs: CoefficientFunctions, copula: CopulaModel) -> str:
    return json.dumps({"model": coefs.description, "copula": copula.to_dict(),
                       "n": coefs.n, "p": coefs.p,
                       "active_mask": coefs.active_mask.astype(int).tolist()})
