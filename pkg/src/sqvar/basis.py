"""Monotone I-spline basis on [0, 1].

The basis is ``(1, I_1, ..., I_{H-1})`` where ``I_j`` is the tail sum
``sum_{i >= j} B_i`` of clamped B-splines of the given degree.  Tail sums of a
partition of unity rise monotonically from 0 to 1, so any coefficient vector
with nonnegative entries after the first yields a nondecreasing function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class SplineBasis:
    """I-spline basis of size ``H = len(inner_knots) + degree + 1``.

    Parameters
    ----------
    inner_knots : sequence of float
        Sorted interior knots in (0, 1).
    degree : int
        Polynomial degree of the I-splines (3 for cubic).
    quadrature_order : int
        Gauss-Legendre points per knot interval for :meth:`gram`.
    """

    inner_knots: tuple = ()
    degree: int = 3
    quadrature_order: int = 16
    constant_only: bool = field(default=False)

    def __post_init__(self):
        knots = tuple(float(k) for k in self.inner_knots)
        if any(not 0.0 < k < 1.0 for k in knots) or list(knots) != sorted(set(knots)):
            raise ValueError("inner knots must be distinct, sorted and inside (0, 1)")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        object.__setattr__(self, "inner_knots", knots)

    @classmethod
    def equispaced(cls, n_knots: int = 1, degree: int = 3, **kw) -> "SplineBasis":
        """Basis with ``n_knots`` equally spaced interior knots."""
        if n_knots < 0:
            raise ValueError("number of knots must be nonnegative")
        knots = tuple(np.arange(1, n_knots + 1) / (n_knots + 1))
        return cls(inner_knots=knots, degree=degree, **kw)

    @classmethod
    def constant(cls) -> "SplineBasis":
        """The degenerate ``H = 1`` basis holding only the constant function."""
        return cls(constant_only=True)

    @property
    def H(self) -> int:
        if self.constant_only:
            return 1
        return len(self.inner_knots) + self.degree + 1

    @cached_property
    def _knot_vector(self) -> np.ndarray:
        d = self.degree
        return np.r_[[0.0] * (d + 1), self.inner_knots, [1.0] * (d + 1)]

    def design(self, taus) -> np.ndarray:
        """Basis values at each of ``taus`` (closed interval allowed), shape ``(m, H)``."""
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        if np.any((taus < 0) | (taus > 1)):
            raise ValueError("quantile levels must lie in [0, 1]")
        if self.constant_only:
            return np.ones((taus.size, 1))
        B = BSpline.design_matrix(taus, self._knot_vector, self.degree, extrapolate=False)
        B = B.toarray()
        # tail sums: column j holds sum_{i >= j} B_i; column 0 is exactly 1
        tails = np.cumsum(B[:, ::-1], axis=1)[:, ::-1]
        out = np.clip(tails, 0.0, 1.0)
        out[:, 0] = 1.0
        return out

    def eval(self, tau: float) -> np.ndarray:
        if not 0.0 < tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
        return self.design([tau])[0]

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights covering [0, 1] piecewise."""
        x, w = np.polynomial.legendre.leggauss(self.quadrature_order)
        edges = np.r_[0.0, self.inner_knots, 1.0]
        nodes, weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
            weights.append(0.5 * (b - a) * w)
        return np.concatenate(nodes), np.concatenate(weights)

    @cached_property
    def _gram(self) -> np.ndarray:
        nodes, weights = self.quadrature()
        B = self.design(nodes)
        G = (B * weights[:, None]).T @ B
        return 0.5 * (G + G.T)

    def gram(self) -> np.ndarray:
        """``int_0^1 b(u) b(u)^T du``."""
        return self._gram.copy()


def func_norm(G: np.ndarray, delta: np.ndarray) -> float | np.ndarray:
    """L2 norm on [0, 1] of ``b(.)^T delta``; rows of a 2-D ``delta`` are separate functions."""
    G = np.asarray(G, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if delta.shape[-1] != G.shape[0]:
        raise ValueError(f"coefficient length {delta.shape[-1]} does not match basis size {G.shape[0]}")
    q = np.einsum("...i,ij,...j->...", delta, G, delta)
    return np.sqrt(np.maximum(q, 0.0))
