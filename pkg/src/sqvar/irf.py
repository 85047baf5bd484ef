"""Generalized and scenario-based impulse responses by forward simulation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .basis import SplineBasis
from .innovation import CopulaModel, recover_ranks
from .simplex import CoordinateSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SqvarSystem:
    """Fitted coefficient blocks for every equation plus their coordinate system.

    ``gammas`` has shape ``(n, N+1, H)``.
    """

    gammas: np.ndarray
    cs: CoordinateSystem
    basis: SplineBasis

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=float)
        if g.ndim != 3 or g.shape[0] != self.cs.n or g.shape[1] != self.cs.N + 1:
            raise ValueError(f"coefficient blocks of shape {g.shape} do not match n={self.cs.n}, "
                             f"N={self.cs.N}")
        if g.shape[2] != self.basis.H:
            raise ValueError("coefficient blocks do not match the basis size")
        object.__setattr__(self, "gammas", g)

    @classmethod
    def from_fits(cls, fits, cs: CoordinateSystem, basis: SplineBasis) -> "SqvarSystem":
        return cls(np.stack([f.gamma for f in fits]), cs, basis)

    @property
    def n(self) -> int:
        return self.cs.n

    @property
    def p(self) -> int:
        return self.cs.p


def state_from_history(values: np.ndarray, p: int) -> np.ndarray:
    """Last ``p`` columns of an ``n x T`` array as a ``(p, n)`` state, most recent first."""
    values = np.asarray(values, dtype=float)
    if values.shape[1] < p:
        raise ValueError(f"need at least p={p} observations")
    return values[:, ::-1][:, :p].T.copy()


def _coords(system: SqvarSystem, states: np.ndarray) -> np.ndarray:
    m = states.shape[0]
    W = np.empty((m, system.cs.N + 1))
    W[:, 0] = 1.0
    W[:, 1:] = states.reshape(m, -1)
    return system.cs.coordinates(W)


def forecast_paths(system: SqvarSystem, states: np.ndarray, U: np.ndarray):
    """One step for many paths: ``states (m, p, n)``, ranks ``U (m, n)`` -> ``(m, n)``.

    Also returns a boolean per path flagging negative barycentric coordinates.
    """
    C = _coords(system, states)
    out = np.empty(U.shape)
    for i in range(system.n):
        B = system.basis.design(U[:, i])
        out[:, i] = np.einsum("mk,kh,mh->m", C, system.gammas[i], B)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite forecast")
    return out, np.any(C < -1e-12, axis=1)


def forecast_one_step(system: SqvarSystem, state, u) -> np.ndarray:
    """Next observation vector given the ``(p, n)`` state (most recent first) and ranks ``u``."""
    state = np.asarray(state, dtype=float)
    if state.shape != (system.p, system.n):
        raise ValueError(f"state must have shape {(system.p, system.n)}")
    u = np.asarray(u, dtype=float)
    if u.shape != (system.n,) or np.any((u <= 0) | (u >= 1)):
        raise ValueError("ranks must be a length-n vector inside (0, 1)")
    y, oob = forecast_paths(system, state[None], u[None])
    if oob[0]:
        log.warning("state lies outside the bounds; coordinates are negative")
    return y[0]


def _roll(states: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.concatenate([y[:, None, :], states[:, :-1, :]], axis=1)


def _clamp(system: SqvarSystem, y: np.ndarray) -> np.ndarray:
    return np.clip(y, system.cs.bounds.lb, system.cs.bounds.ub)


@dataclass(frozen=True)
class ImpulseSpec:
    shocked_series: int
    shock_quantile: float
    horizon: int
    history: np.ndarray
    n_sim: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.shock_quantile < 1.0:
            raise ValueError("shock quantile must lie in (0, 1)")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.n_sim < 2:
            raise ValueError("n_sim must be at least 2")
        object.__setattr__(self, "history", np.asarray(self.history, dtype=float))


@dataclass
class IRFResult:
    irf: np.ndarray
    mc_se: np.ndarray
    conditional_mean: np.ndarray
    baseline_mean: np.ndarray
    out_of_bounds_paths: int

    def rows(self, names=None):
        n, h1 = self.irf.shape
        names = names or [f"y{i + 1}" for i in range(n)]
        for i in range(n):
            for h in range(h1):
                yield names[i], h, float(self.irf[i, h]), float(self.mc_se[i, h])

    def to_csv(self, path, names=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "horizon", "value", "mc_se"])
            for r in self.rows(names):
                w.writerow([r[0], r[1], repr(r[2]), repr(r[3])])


def _path_normals(seed: int, n_sim: int, shape: tuple, copies: int) -> np.ndarray:
    """Standard normals per path from a stream keyed by ``(seed, path)``."""
    out = np.empty((copies, n_sim) + shape)
    for k in range(n_sim):
        rng = np.random.default_rng([seed, k])
        out[:, k] = rng.standard_normal((copies,) + shape)
    return out


def _simulate(system, states, scores, clamp):
    h1 = scores.shape[1]
    paths = np.empty((states.shape[0], system.n, h1))
    oob = np.zeros(states.shape[0], dtype=bool)
    U = stats.norm.cdf(scores)
    for s in range(h1):
        y, flag = forecast_paths(system, states, U[:, s])
        oob |= flag
        if clamp:
            y = _clamp(system, y)
        paths[:, :, s] = y
        states = _roll(states, y)
    return paths, oob


def generalized_irf(system: SqvarSystem, copula: CopulaModel, spec: ImpulseSpec,
                    common_random_numbers: bool = True, clamp: bool = False) -> IRFResult:
    """Mean response to pinning ``U_j = tau*`` at impact, minus the unconditional mean.

    Non-shocked ranks at impact come from the Gaussian conditional distribution
    given the shocked normal score; later ranks are unconditional copula draws.
    With common random numbers both branches reuse the same normals after
    impact and the standard error is that of the paired difference.
    """
    if copula.n != system.n:
        raise ValueError("copula dimension does not match the system")
    j = spec.shocked_series
    if not 0 <= j < system.n:
        raise ValueError(f"shocked series {j} out of range")
    hist = spec.history
    if hist.shape != (system.p, system.n):
        raise ValueError(f"history must have shape {(system.p, system.n)}")
    if np.any(hist < system.cs.bounds.lb) or np.any(hist > system.cs.bounds.ub):
        log.warning("history lies outside the bounds")
    n, h1, m = system.n, spec.horizon + 1, spec.n_sim
    E = _path_normals(spec.seed, m, (h1, n), 1 if common_random_numbers else 2)
    L = np.linalg.cholesky(copula.corr())
    base_scores = E[0] @ L.T
    cond_src = E[0] if common_random_numbers else E[1]
    cond_scores = cond_src @ L.T
    # impact: condition the other scores on the pinned shocked score
    zj = stats.norm.ppf(spec.shock_quantile)
    others = [i for i in range(n) if i != j]
    if others:
        r, S = copula.conditional_factor(j)
        cond_scores[:, 0, others] = zj * r + cond_src[:, 0, others] @ S.T
    cond_scores[:, 0, j] = zj
    states = np.broadcast_to(hist, (m,) + hist.shape).copy()
    base, oob_b = _simulate(system, states, base_scores, clamp)
    cond, oob_c = _simulate(system, states.copy(), cond_scores, clamp)
    if common_random_numbers:
        se = np.std(cond - base, axis=0, ddof=1) / np.sqrt(m)
    else:
        se = np.sqrt((np.var(cond, axis=0, ddof=1) + np.var(base, axis=0, ddof=1)) / m)
    oob = int(np.sum(oob_b | oob_c))
    if oob:
        log.warning("%d simulated paths left the bounds", oob)
    cm, bm = cond.mean(axis=0), base.mean(axis=0)
    return IRFResult(irf=cm - bm, mc_se=se, conditional_mean=cm, baseline_mean=bm,
                     out_of_bounds_paths=oob)


def neutral_shock_quantile(system: SqvarSystem, history, j: int) -> float:
    """Level at which the impact quantile of series ``j`` equals its conditional mean."""
    history = np.asarray(history, dtype=float)
    C = _coords(system, history[None])
    nodes, weights = system.basis.quadrature()
    weights_h = C[0] @ system.gammas[j]
    mean = float(weights @ (system.basis.design(nodes) @ weights_h))
    u, clamped = recover_ranks(system.gammas[j], system.basis, C, np.array([mean]), tol=1e-12)
    if clamped[0]:
        raise ValueError("conditional mean lies outside the fitted quantile range")
    return float(u[0])


@dataclass(frozen=True)
class Scenario:
    """Rank trajectory, ``tau_path`` of shape ``(n, h+1)``."""

    tau_path: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.tau_path, dtype=float))
        if np.any((t <= 0) | (t >= 1)) or not np.all(np.isfinite(t)):
            raise ValueError("scenario ranks must lie in (0, 1)")
        object.__setattr__(self, "tau_path", t)

    @property
    def horizon(self) -> int:
        return self.tau_path.shape[1] - 1

    @classmethod
    def constant(cls, n: int, horizon: int, tau: float) -> "Scenario":
        return cls(np.full((n, horizon + 1), tau))

    @classmethod
    def from_csv(cls, path) -> "Scenario":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def scenario_forecast(system: SqvarSystem, scenario: Scenario, state,
                      clamp: bool = False) -> np.ndarray:
    """Deterministic path ``(n, h+1)`` driven by the scenario ranks."""
    tau = scenario.tau_path
    if tau.shape[0] != system.n:
        raise ValueError("scenario has the wrong number of series")
    states = np.asarray(state, dtype=float)[None].copy()
    if states.shape[1:] != (system.p, system.n):
        raise ValueError(f"state must have shape {(system.p, system.n)}")
    out = np.empty(tau.shape)
    for s in range(tau.shape[1]):
        y, oob = forecast_paths(system, states, tau[:, s][None])
        if oob[0]:
            log.warning("scenario state left the bounds at step %d", s)
        if clamp:
            y = _clamp(system, y)
        out[:, s] = y[0]
        states = _roll(states, y)
    return out


def scenario_irf(path_a, path_b) -> np.ndarray:
    a = np.asarray(path_a, dtype=float)
    b = np.asarray(path_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"path shapes differ: {a.shape} vs {b.shape}")
    return a - b
