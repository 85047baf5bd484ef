import csv
import logging

import numpy as np
import pytest

from sqvar.basis import SplineBasis
from sqvar.panel import TimeSeriesPanel, build_lagged_design, compute_bounds
from sqvar.select import (active_set, bic, bic_value, coefficient_curves, default_lambda_grid,
                          select_lambda, select_system, write_curves_csv)
from sqvar.simplex import CoordinateSystem
from sqvar.solver import EquationData, QuantileGrid, SqvarFit, fit_unpenalized, loss_value


def _setup(T=150, seed=0, n=2, p=1, coef=0.5):
    rng = np.random.default_rng(seed)
    Y = np.zeros((n, T))
    for t in range(1, T):
        Y[:, t] = rng.standard_normal(n)
        Y[0, t] += coef * Y[0, t - 1]
    panel = TimeSeriesPanel(Y)
    basis = SplineBasis.equispaced(1)
    cs = CoordinateSystem(compute_bounds(panel), p)
    design = build_lagged_design(panel, p)
    datasets = [EquationData.build(design, cs, basis, QuantileGrid(10), i) for i in range(n)]
    return datasets, basis, cs


def test_bic_example():
    assert bic_value(0.5, 3, 5, 100) == pytest.approx(-0.34776, abs=5e-6)


def test_bic_empty_active_set():
    assert bic_value(0.5, 0, 5, 100) == pytest.approx(np.log(0.5))


def test_bic_complexity_term_decreases_in_T():
    a = bic_value(0.5, 2, 5, 100) - np.log(0.5)
    b = bic_value(0.5, 2, 5, 200) - np.log(0.5)
    assert b < a


def test_bic_increasing_in_s1():
    vals = [bic_value(0.3, s, 5, 500) for s in range(6)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_bic_zero_loss(caplog):
    with caplog.at_level(logging.WARNING):
        assert bic_value(0.0, 1, 5, 100) == float("-inf")
    assert "interpolation" in caplog.text


def test_default_grid():
    g = default_lambda_grid(600, [0.5])
    assert g[0] == pytest.approx(0.13058, abs=5e-6)
    full = default_lambda_grid(600)
    assert np.all(np.diff(full) > 0) and full.size == 6


@pytest.mark.parametrize("T,c", [(600, []), (2, [1.0]), (100, [-1.0])])
def test_default_grid_errors(T, c):
    with pytest.raises(ValueError):
        default_lambda_grid(T, c)


def _fit_with(gamma):
    return SqvarFit(gamma=gamma, lambda_used=0.0, equation_index=0, objective_value=0.0)


def test_active_set_examples():
    basis = SplineBasis.equispaced(1)
    G = basis.gram()
    g = np.tile(np.r_[0.3, 0.1, 0.2, 0.1, 0.0], (5, 1))
    assert active_set(_fit_with(g), G, n=2) == set()
    g2 = g.copy()
    g2[3] += np.eye(5)[1]  # slot 2 -> series 0, lag 2
    assert np.sqrt(G[1, 1]) > 1e-6
    assert active_set(_fit_with(g2), G, n=2) == {(0, 2)}
    assert active_set(_fit_with(g2), G, eps_zero=10.0, n=2) == set()


def test_bic_uses_snapped_groups():
    datasets, basis, _ = _setup()
    G = basis.gram()
    fit = fit_unpenalized(datasets[0], G)
    expected = bic_value(loss_value(fit.gamma, datasets[0]), 2, basis.H, datasets[0].T_eff)
    assert bic(fit, datasets[0], G) == pytest.approx(expected)


def test_single_element_grid():
    datasets, basis, _ = _setup()
    res = select_lambda(datasets[0], basis.gram(), [0.2], 2)
    assert res.best_lambda == 0.2 and res.bic_values.size == 1


def test_ties_go_to_larger_lambda(monkeypatch):
    import sqvar.select as sel

    datasets, basis, _ = _setup()
    monkeypatch.setattr(sel, "bic", lambda fit, data, G, eps_zero=1e-6: 1.0)
    res = sel.select_lambda(datasets[0], basis.gram(), [0.3, 0.1, 0.2], 2)
    assert np.all(res.bic_values == 1.0)
    assert res.best_lambda == 0.3


def test_selection_finds_the_signal_and_is_deterministic():
    datasets, basis, _ = _setup(T=400, seed=1, coef=0.7)
    G = basis.gram()
    grid = default_lambda_grid(datasets[0].T_eff)
    a = select_lambda(datasets[0], G, grid, 2)
    b = select_lambda(datasets[0], G, grid, 2)
    assert a.active_set == {(0, 1)}
    np.testing.assert_array_equal(a.bic_values, b.bic_values)
    np.testing.assert_array_equal(a.best_fit.gamma, b.best_fit.gamma)
    assert a.best_lambda == grid[np.flatnonzero(a.bic_values == a.bic_values.min())[-1]]
    d = a.to_dict()
    assert set(d) >= {"lambda_grid", "bic", "best_lambda", "active_set", "converged", "fit"}
    assert d["s1_hat"] == 1


def test_select_system_threads_match_serial():
    datasets, basis, _ = _setup(T=120, seed=2)
    G = basis.gram()
    grid = [0.1, 0.3]
    serial = select_system(datasets, G, grid, 2, threads=1)
    pooled = select_system(datasets, G, grid, 2, threads=2)
    for s, p in zip(serial, pooled):
        np.testing.assert_array_equal(s.best_fit.gamma, p.best_fit.gamma)


def test_curves_export(tmp_path):
    datasets, basis, cs = _setup()
    G = basis.gram()
    res = select_lambda(datasets[0], G, [0.2], 2)
    taus = np.arange(1, 100) / 100
    th0, th = coefficient_curves(res.best_fit, cs, basis, taus, G)
    assert th0.shape == (99,) and th.shape == (2, 99)
    inactive = [cs.slot(l, j) for l, j in {(0, 1), (1, 1)} - res.active_set]
    assert np.all(th[inactive] == 0.0)
    path = tmp_path / "c.csv"
    write_curves_csv(path, res.best_fit, cs, basis, taus, G)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["tau", "coefficient", "series", "lag", "value"]
    assert len(rows) == 99 * 3


@pytest.mark.slow
def test_null_model_selects_nothing():
    hits = 0
    for r in range(50):
        datasets, basis, _ = _setup(T=1000, seed=100 + r, coef=0.0)
        res = select_lambda(datasets[0], basis.gram(),
                            default_lambda_grid(datasets[0].T_eff), 2)
        hits += res.active_set == set()
    assert hits / 50 >= 0.9
