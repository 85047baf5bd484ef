"""Max-min barycentric coordinates and the QVAR <-> SQVAR coefficient map.

Vertex ``v_0`` sits at the lower bounds of every lagged value; vertex
``v_(l,j)`` moves lag ``j`` of series ``l`` up by ``N * delta_l``.  All lagged
entries are ordered in lag blocks ``j = 1..p`` with series ``1..n`` inside each
block, matching :func:`sqvar.panel.build_lagged_design`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .panel import SeriesBounds

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BarycentricRow:
    c0: float
    c: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([[self.c0], self.c])

    @property
    def in_simplex(self) -> bool:
        return bool(self.c0 >= 0 and np.all(self.c >= 0))


@dataclass(frozen=True)
class CoordinateSystem:
    bounds: SeriesBounds
    p: int

    @property
    def n(self) -> int:
        return self.bounds.lb.shape[0]

    @property
    def N(self) -> int:
        return self.n * self.p

    @property
    def delta(self) -> np.ndarray:
        return self.bounds.delta

    @property
    def lb_rep(self) -> np.ndarray:
        """Lower bounds repeated over lag blocks (length N)."""
        return np.tile(self.bounds.lb, self.p)

    @property
    def scale_rep(self) -> np.ndarray:
        """``N * delta_l`` repeated over lag blocks (length N)."""
        return self.N * np.tile(self.delta, self.p)

    def vertices(self) -> np.ndarray:
        """The ``(N+1) x (N+1)`` vertex matrix, one vertex per row."""
        N = self.N
        V = np.empty((N + 1, N + 1))
        V[:, 0] = 1.0
        V[:, 1:] = self.lb_rep
        V[1:, 1:] += np.diag(self.scale_rep)
        return V

    def coordinates(self, W: np.ndarray) -> np.ndarray:
        """Barycentric coordinates for a stack of design rows.

        ``W`` has shape ``(m, N+1)`` with a leading column of ones; returns
        ``(m, N+1)`` with ``c0`` in column 0.  Rows outside the bounds give
        negative coordinates, which are returned as is.
        """
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[1] != self.N + 1:
            raise ValueError(f"design rows must have width {self.N + 1}, got {W.shape[1]}")
        C = np.empty_like(W)
        C[:, 1:] = (W[:, 1:] - self.lb_rep) / self.scale_rep
        C[:, 0] = 1.0 - C[:, 1:].sum(axis=1)
        return C

    def barycentric(self, w) -> BarycentricRow:
        full = self.coordinates(np.asarray(w, dtype=float)[None, :])[0]
        row = BarycentricRow(c0=float(full[0]), c=full[1:])
        if not row.in_simplex:
            log.warning("design row lies outside the bounds; coordinates are negative")
        return row

    def qvar_to_sqvar(self, theta0, theta):
        """Map QVAR coefficients to SQVAR (vertex-evaluated) coefficients.

        Works pointwise: ``theta0`` may be a scalar or an array over quantile
        levels, ``theta`` then carries the ``N`` coefficients on its first axis.
        """
        theta0 = np.asarray(theta0, dtype=float)
        theta = np.asarray(theta, dtype=float)
        lb = self.lb_rep.reshape((-1,) + (1,) * theta0.ndim)
        sc = self.scale_rep.reshape(lb.shape)
        phi0 = theta0 + (lb * theta).sum(axis=0)
        phi = sc * theta + phi0
        return phi0, phi

    def sqvar_to_qvar(self, phi0, phi, active=None):
        """Recover QVAR coefficients, zeroing lags outside ``active``.

        ``active`` is a collection of flat indices into the ``N`` lag slots
        (``None`` means all of them).
        """
        phi0 = np.asarray(phi0, dtype=float)
        phi = np.asarray(phi, dtype=float)
        mask = np.zeros(self.N, dtype=bool)
        if active is None:
            mask[:] = True
        else:
            mask[list(active)] = True
        shape = (-1,) + (1,) * phi0.ndim
        lb = self.lb_rep.reshape(shape)
        sc = self.scale_rep.reshape(shape)
        theta = np.where(mask.reshape(shape), (phi - phi0) / sc, 0.0)
        theta0 = phi0 - (lb * theta).sum(axis=0)
        return theta0, theta

    def slot(self, series: int, lag: int) -> int:
        """Flat lag-slot index for 0-based ``series`` and 1-based ``lag``."""
        return (lag - 1) * self.n + series

    def slot_pair(self, k: int) -> tuple[int, int]:
        """Inverse of :meth:`slot`: ``(series, lag)`` with 0-based series."""
        return k % self.n, k // self.n + 1
