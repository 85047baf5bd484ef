"""Simplex quantile vector autoregression with non-crossing quantile curves."""

from .basis import SplineBasis, func_norm
from .innovation import CopulaModel, fit_gaussian_copula
from .panel import (LaggedDesign, PanelError, SeriesBounds, TimeSeriesPanel, build_lagged_design,
                    compute_bounds, load_csv)
from .simplex import BarycentricRow, CoordinateSystem
from .solver import (EquationData, QuantileGrid, ScadPenalty, SolverOptions, SqvarFit,
                     fit_equation, objective)

__version__ = "0.1.0"

__all__ = [
    "BarycentricRow", "CoordinateSystem", "CopulaModel", "EquationData", "LaggedDesign",
    "PanelError", "QuantileGrid", "ScadPenalty", "SeriesBounds", "SolverOptions", "SplineBasis",
    "SqvarFit", "TimeSeriesPanel", "build_lagged_design", "compute_bounds", "fit_equation",
    "fit_gaussian_copula", "func_norm", "load_csv", "objective",
]
