import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import double_loop_objective, lp_cone_qr
from sqvar.basis import SplineBasis
from sqvar.panel import TimeSeriesPanel, build_lagged_design, compute_bounds
from sqvar.simplex import CoordinateSystem
from sqvar.solver import (EquationData, QuantileGrid, ScadPenalty, SolverOptions, SqvarFit,
                          check_loss, fit_equation, fit_unpenalized, group_norms, loss_value,
                          objective, scad)


def ar_data(T, seed, n=1, p=1, L=5, basis=None, coef=0.5):
    rng = np.random.default_rng(seed)
    Y = np.zeros((n, T))
    for t in range(1, T):
        Y[:, t] = coef * Y[:, t - 1] + rng.standard_normal(n) * (1 + 0.3 * np.abs(Y[:, t - 1]))
    panel = TimeSeriesPanel(Y)
    basis = basis or SplineBasis(degree=2)
    cs = CoordinateSystem(compute_bounds(panel), p)
    data = EquationData.build(build_lagged_design(panel, p), cs, basis, QuantileGrid(L), 0)
    return data, basis


def test_check_loss_examples():
    assert check_loss(1.0, 0.5) == 0.5
    assert check_loss(-2.0, 0.25) == 1.5
    for tau in (0.1, 0.5, 0.9):
        assert check_loss(0.0, tau) == 0.0


def test_scad_examples():
    pen = ScadPenalty(0.2)
    assert scad(0.0, pen) == 0.0
    assert scad(1.0, pen) == pytest.approx(4.7 * 0.04 / 2, abs=1e-15)
    assert scad(0.2, pen) == pytest.approx(0.04, abs=1e-15)
    mid = -(0.2**2 - 2 * 3.7 * 0.2 * 0.2 + 0.2**2) / (2 * 2.7)
    assert mid == pytest.approx(0.04, abs=1e-15)


def test_scad_errors():
    with pytest.raises(ValueError):
        scad(-0.1, ScadPenalty(0.2))
    with pytest.raises(ValueError):
        ScadPenalty(0.2, a=2.0)
    with pytest.raises(ValueError):
        ScadPenalty(-1.0)


def test_scad_flat_beyond_a_lambda():
    pen = ScadPenalty(0.3, 3.7)
    x = np.linspace(1.2, 10, 20)
    np.testing.assert_array_equal(pen.value(x), 4.7 * 0.09 / 2)
    np.testing.assert_array_equal(pen.derivative(x), 0.0)


@pytest.mark.parametrize("L", [1, 2, 5, 30])
def test_quantile_grid(L):
    t = QuantileGrid(L).taus
    assert t.size == L
    assert np.all(np.diff(t) > 0) and np.all((t > 0) & (t < 1))
    np.testing.assert_allclose(t + t[::-1], 1.0, atol=1e-15)


def test_objective_zero_gamma():
    data, basis = ar_data(30, 0)
    g = np.zeros((2, basis.H))
    U = data.y[:, None]
    expected = np.mean(U * (data.taus - (U <= 0)))
    assert objective(g, data, ScadPenalty(0.0), basis.gram()) == pytest.approx(expected, abs=1e-15)


def test_objective_collapsed_has_no_penalty(rng):
    data, basis = ar_data(30, 1)
    g = np.tile(rng.normal(size=basis.H), (2, 1))
    G = basis.gram()
    assert objective(g, data, ScadPenalty(5.0), G) == loss_value(g, data)


def test_objective_double_loop_oracle(rng):
    basis = SplineBasis(degree=1)  # H = 2
    data, _ = ar_data(6, 2, L=2, basis=basis)
    assert data.T_eff == 5 and data.H == 2
    G = basis.gram()
    for lam in (0.0, 0.05, 0.5):
        g = rng.normal(size=(2, 2))
        ref = double_loop_objective(g, data.coords, data.y, data.taus, basis, lam, G=G)
        assert objective(g, data, ScadPenalty(lam), G) == pytest.approx(ref, abs=1e-12)


def test_objective_shape_mismatch():
    data, basis = ar_data(20, 0)
    with pytest.raises(ValueError):
        objective(np.zeros((3, basis.H)), data, ScadPenalty(0.0), basis.gram())


def test_constant_response():
    basis = SplineBasis.equispaced(1)
    rng = np.random.default_rng(3)
    coords = np.column_stack([np.ones(40), np.zeros(40)])
    coords[:, 1] = rng.uniform(0, 1, 40)
    coords[:, 0] = 1 - coords[:, 1]
    taus = QuantileGrid(5).taus
    data = EquationData(coords=coords, y=np.full(40, 3.0), taus=taus, B=basis.design(taus))
    fit = fit_unpenalized(data, basis.gram())
    np.testing.assert_allclose(data.predict(fit.gamma), 3.0, atol=1e-3)


def test_large_lambda_collapses():
    data, basis = ar_data(120, 4, n=2, p=2, L=7)
    G = basis.gram()
    fit = fit_equation(data, ScadPenalty(10.0), G)
    assert np.all(group_norms(fit.gamma, G) == 0.0)
    np.testing.assert_allclose(fit.gamma[1:], np.tile(fit.gamma[0], (data.N, 1)), atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_unpenalized_matches_lp(seed):
    data, basis = ar_data(41, seed)
    fit = fit_unpenalized(data, basis.gram())
    ref, _ = lp_cone_qr(data.coords, data.y, data.taus, data.B)
    assert fit.objective_value == pytest.approx(ref, abs=1e-4)
    assert fit.objective_value >= ref - 1e-10


def test_fit_invariants():
    data, basis = ar_data(200, 5, n=2, p=2, L=10, basis=SplineBasis.equispaced(1), coef=0.3)
    G = basis.gram()
    pen = ScadPenalty(0.1)
    base = fit_unpenalized(data, G)
    fit = fit_equation(data, pen, G, init=base.gamma)
    assert np.all(fit.gamma[:, 1:] >= 0)
    assert fit.objective_value == pytest.approx(objective(fit.gamma, data, pen, G), abs=1e-8)
    assert fit.objective_value <= objective(base.gamma, data, pen, G) + 1e-12
    hist = fit.diagnostics["objective_history"]
    assert all(b <= a + 1e-10 for a, b in zip(hist, hist[1:]))
    # non-crossing on the fine grid at every in-sample row
    Q = data.coords @ fit.gamma @ basis.design(np.arange(1, 100) / 100).T
    assert np.all(np.diff(Q, axis=1) >= 0)
    norms = group_norms(fit.gamma, G)
    assert np.all((norms == 0) | (norms > SolverOptions().eps_zero))


def test_lambda_zero_is_unpenalized():
    data, basis = ar_data(80, 6)
    G = basis.gram()
    a = fit_equation(data, ScadPenalty(0.0), G)
    b = fit_unpenalized(data, G)
    np.testing.assert_array_equal(a.gamma, b.gamma)
    assert a.objective_value == loss_value(a.gamma, data)


def test_scale_covariance():
    data, basis = ar_data(60, 7)
    G = basis.gram()
    fit = fit_unpenalized(data, G)
    c = 2.5
    scaled = EquationData(coords=data.coords, y=c * data.y, taus=data.taus, B=data.B)
    assert loss_value(c * fit.gamma, scaled) == pytest.approx(c * loss_value(fit.gamma, data),
                                                              rel=1e-12)
    refit = fit_unpenalized(scaled, G)
    assert refit.objective_value == pytest.approx(c * fit.objective_value, rel=1e-4)


def test_fit_serialization_roundtrip():
    data, basis = ar_data(50, 8)
    fit = fit_unpenalized(data, basis.gram())
    back = SqvarFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.gamma, fit.gamma)
    assert back.objective_value == fit.objective_value
    assert back.converged == fit.converged


def test_deterministic():
    data, basis = ar_data(90, 9, n=1, p=2)
    G = basis.gram()
    a = fit_equation(data, ScadPenalty(0.05), G)
    b = fit_equation(data, ScadPenalty(0.05), G)
    np.testing.assert_array_equal(a.gamma, b.gamma)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.01, 5.0), a=st.floats(2.1, 10.0))
def test_scad_continuity_property(lam, a):
    pen = ScadPenalty(lam, a)
    for x in (lam, a * lam):
        assert abs(pen.value(x * (1 + 1e-15)) - pen.value(x)) <= 1e-12
