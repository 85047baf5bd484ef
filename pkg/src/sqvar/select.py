"""BIC over a lambda grid, active-set extraction and coefficient-curve export."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import SplineBasis
from .simplex import CoordinateSystem
from .solver import (EquationData, ScadPenalty, SolverOptions, SqvarFit, fit_equation,
                     fit_unpenalized, group_norms, loss_value)

log = logging.getLogger(__name__)

DEFAULT_C = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def bic_value(mean_loss: float, s1: int, H: int, T: int) -> float:
    """``ln(mean_loss) + s1 * H * ln(T) / (2T)``; ``-inf`` with a warning if the loss is 0."""
    if mean_loss <= 0:
        log.warning("zero average check loss (perfect interpolation); BIC is -inf")
        return float("-inf")
    return float(np.log(mean_loss) + s1 * H * np.log(T) / (2.0 * T))


def active_set(fit: SqvarFit, G: np.ndarray, eps_zero: float = 1e-6, n: int | None = None) -> set:
    """Lag pairs ``(series, lag)`` whose curve differs from the intercept curve.

    Series are 0-based, lags 1-based.  ``n`` defaults to the number of lag
    slots (i.e. ``p = 1``) when not given.
    """
    norms = group_norms(fit.gamma, G)
    n = n or norms.size
    return {(int(k % n), int(k // n) + 1) for k in np.flatnonzero(norms > eps_zero)}


def bic(fit: SqvarFit, data: EquationData, G: np.ndarray, eps_zero: float = 1e-6) -> float:
    """Information criterion of a fit with ``T`` taken as the effective sample size."""
    s1 = int(np.sum(group_norms(fit.gamma, G) > eps_zero))
    return bic_value(loss_value(fit.gamma, data), s1, data.H, data.T_eff)


def default_lambda_grid(T: int, c_values=DEFAULT_C) -> np.ndarray:
    """``c * ln(T) / sqrt(T)`` for each ``c``, sorted ascending."""
    c = np.asarray(list(c_values), dtype=float)
    if c.size == 0:
        raise ValueError("empty lambda grid")
    if T < 3:
        raise ValueError("T must be at least 3")
    if np.any(c < 0):
        raise ValueError("grid constants must be nonnegative")
    return np.sort(c * np.log(T) / np.sqrt(T))


@dataclass
class SelectionResult:
    lambda_grid: np.ndarray
    bic_values: np.ndarray
    best_lambda: float
    best_fit: SqvarFit
    active_set: set
    fits: list = field(default_factory=list, repr=False)

    @property
    def s1_hat(self) -> int:
        return len(self.active_set)

    def to_dict(self) -> dict:
        return {
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "bic": [float(v) for v in self.bic_values],
            "best_lambda": float(self.best_lambda),
            "active_set": sorted([list(a) for a in self.active_set]),
            "s1_hat": self.s1_hat,
            "converged": [bool(f.converged) for f in self.fits],
            "fit": self.best_fit.to_dict(),
        }


def select_lambda(data: EquationData, G: np.ndarray, lambda_grid, n: int,
                  opts: SolverOptions | None = None, init: SqvarFit | None = None) -> SelectionResult:
    """Fit every ``lambda`` on the grid and keep the BIC minimizer.

    The unpenalized fit supplies the LLA weights for every grid point; each fit
    also starts from the previous grid point's solution.  Ties go to the
    larger ``lambda``.  Non-converged fits are skipped unless none converged.
    """
    opts = opts or SolverOptions()
    grid = np.sort(np.asarray(lambda_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if data.T_eff < data.H * (data.N + 1):
        log.warning("T - p = %d is below H * (N + 1) = %d", data.T_eff, data.H * (data.N + 1))
    base = init or fit_unpenalized(data, G, opts)
    fits = []
    prev = base.gamma
    for lam in grid:
        if lam == 0:
            fit = base
        else:
            fit = fit_equation(data, ScadPenalty(lam), G, opts, init=base.gamma, start=prev)
        fits.append(fit)
        prev = fit.gamma
    bics = np.array([bic(f, data, G, opts.eps_zero) for f in fits])
    usable = np.array([f.converged for f in fits])
    if not usable.any():
        log.warning("no fit on the lambda grid converged; selecting among all of them")
        usable[:] = True
    elif not usable.all():
        log.warning("%d of %d grid fits did not converge", int((~usable).sum()), usable.size)
    masked = np.where(usable, bics, np.inf)
    best = int(np.flatnonzero(masked == masked.min())[-1])
    return SelectionResult(lambda_grid=grid, bic_values=bics, best_lambda=float(grid[best]),
                           best_fit=fits[best], active_set=active_set(fits[best], G, opts.eps_zero, n),
                           fits=fits)


def select_system(datasets, G: np.ndarray, lambda_grid, n: int, opts: SolverOptions | None = None,
                  threads: int = 1) -> list:
    """:func:`select_lambda` for every equation; equations run on a thread pool."""
    if threads <= 1:
        return [select_lambda(d, G, lambda_grid, n, opts) for d in datasets]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda d: select_lambda(d, G, lambda_grid, n, opts), datasets))


def coefficient_curves(fit: SqvarFit, cs: CoordinateSystem, basis: SplineBasis, taus,
                       G: np.ndarray, eps_zero: float = 1e-6):
    """QVAR curves implied by a fit: ``theta0`` (K,) and ``theta`` (N, K).

    Inactive slots are exactly zero and ``theta0`` subtracts only active lags.
    """
    taus = np.asarray(taus, dtype=float)
    phi = basis.design(taus) @ fit.gamma.T  # (K, N+1)
    active = np.flatnonzero(group_norms(fit.gamma, G) > eps_zero)
    return cs.sqvar_to_qvar(phi[:, 0], phi[:, 1:].T, active)


def write_curves_csv(path, fit: SqvarFit, cs: CoordinateSystem, basis: SplineBasis, taus,
                     G: np.ndarray, names=None, eps_zero: float = 1e-6) -> None:
    """Long-format CSV: ``tau, coefficient, series, lag, value``."""
    th0, th = coefficient_curves(fit, cs, basis, taus, G, eps_zero)
    names = names or [f"y{i + 1}" for i in range(cs.n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "coefficient", "series", "lag", "value"])
        for a, tau in enumerate(taus):
            w.writerow([f"{tau:.6g}", "theta0", "", 0, repr(float(th0[a]))])
            for k in range(cs.N):
                l, j = cs.slot_pair(k)
                w.writerow([f"{tau:.6g}", f"theta_{names[l]}_{j}", names[l], j,
                            repr(float(th[k, a]))])
