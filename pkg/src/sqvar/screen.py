"""Quantile-adaptive marginal screening of lagged predictors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .panel import TimeSeriesPanel

DEFAULT_TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ScreenConfig:
    """Screening settings.

    Exactly one of ``nu_T`` (absolute threshold) and ``top_k`` (keep the K
    largest max-over-tau statistics) is used; ``top_k`` wins when both are set.
    """

    p: int
    tau_grid: tuple = DEFAULT_TAUS
    nu_T: float = 0.0
    top_k: int | None = None

    def __post_init__(self):
        taus = tuple(float(t) for t in self.tau_grid)
        if not taus:
            raise ValueError("tau grid is empty")
        if any(not 0.0 < t < 1.0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("tau grid must be strictly increasing inside (0, 1)")
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.nu_T < 0 or np.isnan(self.nu_T):
            raise ValueError("nu_T must be nonnegative")
        if self.top_k is not None and self.top_k < 0:
            raise ValueError("top_k must be nonnegative")
        object.__setattr__(self, "tau_grid", taus)


def empirical_quantile(y, tau: float) -> float:
    """``inf{v : F_hat(v) >= tau}`` for the empirical CDF of ``y``."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty sample")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    k = max(int(math.ceil(tau * y.size - 1e-12)), 1)
    return float(np.partition(y, k - 1)[k - 1])


def _profile(y, x, tau, b1):
    """Check loss after optimizing the intercept for slope ``b1``."""
    r = y - b1 * x
    b0 = empirical_quantile(r, tau)
    u = r - b0
    return float(np.sum(u * (tau - (u < 0)))), b0


def _loss(y, x, tau, b0, b1):
    u = y - b0 - b1 * x
    return float(np.sum(u * (tau - (u < 0))))


def marginal_qr(y, x, tau: float) -> tuple[float, float]:
    """Exact two-parameter quantile regression of ``y`` on ``(1, x)``.

    The profiled loss in the slope is convex and piecewise linear with kinks at
    pairwise slopes, so golden-section search inside the range of adjacent
    slopes (which contains every pairwise slope) locates the minimum; the
    answer is then snapped to the best line through two near-zero residuals.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise ValueError("y and x must be vectors of equal length")
    if y.size < 3:
        raise ValueError("need at least 3 observations")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if np.ptp(x) == 0:
        raise ValueError("constant predictor")
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    dx = np.diff(xs)
    ok = dx > 0
    slopes = np.diff(ys)[ok] / dx[ok]
    lo, hi = float(slopes.min()), float(slopes.max())
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = _profile(y, x, tau, c)[0], _profile(y, x, tau, d)[0]
    span = max(hi - lo, 1.0)
    for _ in range(200):
        if b - a <= 1e-13 * span:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _profile(y, x, tau, c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _profile(y, x, tau, d)[0]
    b1 = 0.5 * (a + b)
    best_val, b0 = _profile(y, x, tau, b1)
    best = (b0, b1)
    r = np.abs(y - b0 - b1 * x)
    near = np.argsort(r)[:4]
    for s in range(len(near)):
        for t in range(s + 1, len(near)):
            i, k = near[s], near[t]
            if x[i] == x[k]:
                continue
            sb1 = (y[k] - y[i]) / (x[k] - x[i])
            sb0 = y[i] - sb1 * x[i]
            val = _loss(y, x, tau, sb0, sb1)
            if val <= best_val + 1e-12 * max(abs(best_val), 1.0):
                best_val, best = val, (float(sb0), float(sb1))
    return best


def screen_statistic(y, x, tau: float) -> float:
    """``mean_t (b0 + b1 x_t - Q_hat_y(tau))^2`` from the marginal quantile fit."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    b0, b1 = marginal_qr(y, x, tau)
    d = b0 + b1 * x - empirical_quantile(y, tau)
    return float(np.mean(d * d))


@dataclass
class ScreenResult:
    target: int
    pairs: list
    taus: tuple
    statistics: np.ndarray  # (len(pairs), len(taus))
    selected: set = field(default_factory=set)

    @property
    def max_statistic(self) -> np.ndarray:
        return self.statistics.max(axis=1)

    def to_csv(self, path, names=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["m_series", "m_lag", "tau", "statistic", "selected"])
            for a, (l, j) in enumerate(self.pairs):
                label = names[l] if names else l
                for b, tau in enumerate(self.taus):
                    w.writerow([label, j, tau, repr(float(self.statistics[a, b])),
                                int((l, j) in self.selected)])


def screen_statistics(panel: TimeSeriesPanel, cfg: ScreenConfig, i: int) -> ScreenResult:
    """All ``n * p * A`` marginal statistics for target series ``i``."""
    Y = panel.values
    n, T = Y.shape
    p = cfg.p
    if T <= p + 10:
        raise ValueError(f"need T > p + 10, got T={T}, p={p}")
    if not 0 <= i < n:
        raise ValueError(f"target series {i} out of range")
    y = Y[i, p:]
    pairs = [(l, j) for j in range(1, p + 1) for l in range(n)]
    stats = np.zeros((len(pairs), len(cfg.tau_grid)))
    for a, (l, j) in enumerate(pairs):
        x = Y[l, p - j:T - j]
        if np.ptp(x) == 0:
            continue  # a constant predictor carries no signal
        for b, tau in enumerate(cfg.tau_grid):
            stats[a, b] = screen_statistic(y, x, tau)
    return ScreenResult(target=i, pairs=pairs, taus=cfg.tau_grid, statistics=stats)


def apply_threshold(result: ScreenResult, cfg: ScreenConfig) -> set:
    """Selected pairs under the absolute threshold or the top-K rule."""
    mx = result.max_statistic
    if cfg.top_k is not None:
        keep = np.argsort(-mx, kind="stable")[:cfg.top_k]
    else:
        keep = np.flatnonzero(mx >= cfg.nu_T)
    return {result.pairs[k] for k in keep}


def screen(panel: TimeSeriesPanel, cfg: ScreenConfig, i: int) -> ScreenResult:
    """Pairs ``(series, lag)`` whose statistic reaches the threshold at some grid level."""
    res = screen_statistics(panel, cfg, i)
    res.selected = apply_threshold(res, cfg)
    return res
