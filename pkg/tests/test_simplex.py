import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqvar.basis import SplineBasis
from sqvar.panel import SeriesBounds
from sqvar.simplex import CoordinateSystem


def _cs(lb, ub, p=1):
    return CoordinateSystem(SeriesBounds(np.asarray(lb, float), np.asarray(ub, float)), p)


def _random_cs(rng, n, p):
    lb = rng.normal(size=n)
    return _cs(lb, lb + rng.uniform(0.5, 3.0, size=n), p)


def test_lower_vertex():
    cs = _cs([0.0, -1.0], [1.0, 1.0], p=2)
    row = cs.barycentric(np.r_[1.0, cs.lb_rep])
    assert row.c0 == 1.0
    np.testing.assert_array_equal(row.c, 0.0)


def test_scalar_upper_bound_coordinate():
    row = _cs([0.0], [2.0]).barycentric([1.0, 2.0])
    assert row.c[0] == 1.0 and row.c0 == 0.0


def test_out_of_bounds_row_is_flagged(caplog):
    row = _cs([0.0], [1.0]).barycentric([1.0, 2.0])
    assert not row.in_simplex
    assert "outside" in caplog.text


def test_vertices_reconstruct_row(rng):
    cs = _random_cs(rng, 3, 2)
    V = cs.vertices()
    assert np.linalg.matrix_rank(V) == cs.N + 1
    w = np.r_[1.0, cs.lb_rep + rng.uniform(0, 1, cs.N) * np.tile(cs.delta, 2)]
    c = cs.barycentric(w).full
    np.testing.assert_allclose(c @ V, w, atol=1e-12)


def test_forward_zero_theta():
    phi0, phi = _cs([0.0, 0.0], [1.0, 1.0]).qvar_to_sqvar(1.0, np.zeros(2))
    assert phi0 == 1.0
    np.testing.assert_array_equal(phi, 1.0)


def test_forward_two_series():
    phi0, phi = _cs([0.0, 0.0], [1.0, 1.0]).qvar_to_sqvar(1.0, [0.5, 0.3])
    assert phi0 == pytest.approx(1.0)
    np.testing.assert_allclose(phi, [2.0, 1.6], atol=1e-15)


def test_forward_scalar_shifted_bounds():
    phi0, phi = _cs([-1.0], [1.0]).qvar_to_sqvar(0.0, [1.0])
    assert phi0 == pytest.approx(-1.0)
    np.testing.assert_allclose(phi, [1.0])


def test_inverse_two_series():
    th0, th = _cs([0.0, 0.0], [1.0, 1.0]).sqvar_to_qvar(1.0, [2.0, 1.6])
    assert th0 == pytest.approx(1.0)
    np.testing.assert_allclose(th, [0.5, 0.3], atol=1e-15)


def test_inactive_collapse():
    cs = _cs([0.5, 1.0], [1.0, 3.0])
    th0, th = cs.sqvar_to_qvar(0.7, [0.7, 0.7], active=[])
    assert th0 == 0.7
    np.testing.assert_array_equal(th, 0.0)


def test_inactive_slots_zeroed():
    cs = _cs([0.5, 1.0], [1.0, 3.0])
    th0, th = cs.sqvar_to_qvar(0.7, [1.7, 0.9], active=[0])
    assert th[1] == 0.0
    assert th[0] == pytest.approx(1.0 / (2 * 0.5))
    assert th0 == pytest.approx(0.7 - 0.5 * th[0])


def test_slot_pair_inverse():
    cs = _cs([0, 0, 0], [1, 1, 1], p=3)
    for k in range(cs.N):
        assert cs.slot(*cs.slot_pair(k)) == k
    assert cs.slot_pair(4) == (1, 2)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 4), p=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_round_trip_and_value_equivalence(n, p, seed):
    rng = np.random.default_rng(seed)
    cs = _random_cs(rng, n, p)
    th0 = rng.normal()
    th = rng.normal(size=cs.N)
    phi0, phi = cs.qvar_to_sqvar(th0, th)
    b0, b = cs.sqvar_to_qvar(phi0, phi)
    assert abs(b0 - th0) <= 1e-12 * max(1.0, abs(th0), np.abs(th).max() * np.abs(cs.lb_rep).max())
    np.testing.assert_allclose(b, th, rtol=0, atol=1e-12)
    w = np.r_[1.0, cs.lb_rep + rng.uniform(0, 1, cs.N) * np.tile(cs.delta, p)]
    c = cs.barycentric(w).full
    assert abs(c.sum() - 1.0) <= 1e-12
    assert np.all(c >= -1e-15)
    assert abs(w @ np.r_[th0, th] - c @ np.r_[phi0, phi]) <= 1e-10


def test_monotonicity_transfer(rng):
    cs = _random_cs(rng, 2, 2)
    basis = SplineBasis.equispaced(1)
    taus = np.linspace(0.01, 0.99, 99)
    gamma = np.abs(rng.normal(size=(cs.N + 1, basis.H)))
    gamma[:, 0] = rng.normal(size=cs.N + 1)
    Phi = basis.design(taus) @ gamma.T  # nondecreasing columns
    th0, th = cs.sqvar_to_qvar(Phi[:, 0], Phi[:, 1:].T)
    for _ in range(50):
        w = np.r_[1.0, cs.lb_rep + rng.uniform(0, 1, cs.N) * np.tile(cs.delta, 2)]
        q = th0 + w[1:] @ th
        assert np.all(np.diff(q) >= -1e-12)
