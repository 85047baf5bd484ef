"""Bounded multivariate time-series panels and their lagged designs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PanelError(ValueError):
    """Raised for malformed or degenerate panel input."""


@dataclass(frozen=True)
class TimeSeriesPanel:
    """An ``n x T`` matrix of observations, one row per series.

    Parameters
    ----------
    values : ndarray, shape (n, T)
        Observations; time increases along the second axis.
    series_names : list of str, optional
        Defaults to ``y1 .. yn``.
    """

    values: np.ndarray
    series_names: tuple = field(default=())

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise PanelError("no observations")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise PanelError(f"non-finite value in series {bad[0]} at time {bad[1]}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        names = tuple(self.series_names) or tuple(f"y{i + 1}" for i in range(vals.shape[0]))
        if len(names) != vals.shape[0]:
            raise PanelError(f"{len(names)} names for {vals.shape[0]} series")
        object.__setattr__(self, "series_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.series_names)
            for row in self.values.T:
                writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class SeriesBounds:
    """Per-series lower and upper bounds with ``lb < ub`` strictly."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.atleast_1d(np.asarray(self.lb, dtype=float)).copy()
        ub = np.atleast_1d(np.asarray(self.ub, dtype=float)).copy()
        if lb.shape != ub.shape or lb.ndim != 1:
            raise PanelError("lb and ub must be vectors of equal length")
        if not np.all(ub - lb > 0):
            i = int(np.argmin(ub - lb))
            raise PanelError(f"degenerate bounds for series {i}: lb={lb[i]!r}, ub={ub[i]!r}")
        lb.setflags(write=False)
        ub.setflags(write=False)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def delta(self) -> np.ndarray:
        return self.ub - self.lb

    def to_json(self) -> str:
        return json.dumps({"lb": self.lb.tolist(), "ub": self.ub.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SeriesBounds":
        d = json.loads(text)
        return cls(np.asarray(d["lb"], float), np.asarray(d["ub"], float))


@dataclass(frozen=True)
class LaggedDesign:
    """Rows ``W_t = (1, Y_{t-1}, ..., Y_{t-p})`` for ``t = p+1 .. T``.

    ``responses`` holds the matching ``Y_t`` as an ``(T - p, n)`` array.
    """

    rows: np.ndarray
    responses: np.ndarray
    p: int

    @property
    def N(self) -> int:
        return self.rows.shape[1] - 1


def load_csv(path, has_header: bool = True) -> TimeSeriesPanel:
    """Read a panel from CSV with series as columns and time down the rows."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    names = None
    if has_header and rows:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise PanelError(f"{path}: no observations")
    width = len(names) if names is not None else len(rows[0])
    data = np.empty((len(rows), width))
    first_line = 2 if has_header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise PanelError(
                f"{path}: row {r + first_line} has {len(row)} columns, expected {width}"
            )
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise PanelError(
                    f"{path}: cannot parse {cell!r} at row {r + first_line}, column {c + 1}"
                ) from None
            if not np.isfinite(v):
                raise PanelError(
                    f"{path}: non-finite value {cell!r} at row {r + first_line}, column {c + 1}"
                )
            data[r, c] = v
    return TimeSeriesPanel(data.T, tuple(names) if names else ())


def compute_bounds(panel: TimeSeriesPanel, margin: float = 0.0) -> SeriesBounds:
    """Empirical min/max per series, widened by ``margin`` times the range."""
    if margin < 0:
        raise PanelError("margin must be nonnegative")
    lo = panel.values.min(axis=1)
    hi = panel.values.max(axis=1)
    rng = hi - lo
    return SeriesBounds(lo - margin * rng, hi + margin * rng)


def build_lagged_design(panel: TimeSeriesPanel, p: int) -> LaggedDesign:
    if p < 1:
        raise PanelError("lag order must be positive")
    if p >= panel.T:
        raise PanelError(f"lag order p={p} must be smaller than T={panel.T}")
    Y = panel.values
    T = panel.T
    cols = [np.ones(T - p)]
    for j in range(1, p + 1):
        cols.extend(Y[:, p - j:T - j])
    rows = np.column_stack(cols)
    return LaggedDesign(rows=rows, responses=Y[:, p:].T.copy(), p=p)
