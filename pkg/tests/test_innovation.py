import numpy as np
import pytest
from scipy import stats

from sqvar.basis import SplineBasis
from sqvar.innovation import (RANK_CEIL, RANK_FLOOR, CopulaModel, NonInvertibleCurve,
                              copula_loglik, fit_gaussian_copula, innovation_covariance,
                              quantile_curve, recover_rank, recover_rank_matrix, recover_ranks)
from sqvar.solver import SqvarFit


@pytest.fixture
def curve():
    basis = SplineBasis.equispaced(1)
    gamma = np.array([[0.5, 0.4, 0.3, 0.2, 0.8],
                      [-1.0, 1.0, 0.5, 0.6, 1.2],
                      [0.0, 0.2, 0.2, 0.1, 0.3]])
    coords = np.array([0.3, 0.5, 0.2])
    return basis, gamma, coords


def test_rank_round_trip(curve):
    basis, gamma, coords = curve
    y = quantile_curve(gamma, basis, coords, [0.3])[0]
    res = recover_rank(gamma, basis, coords, y)
    assert not res.clamped
    assert res.u == pytest.approx(0.3, abs=1e-6)


def test_rank_clamped_below_and_above(curve):
    basis, gamma, coords = curve
    lo = quantile_curve(gamma, basis, coords, [RANK_FLOOR])[0]
    hi = quantile_curve(gamma, basis, coords, [RANK_CEIL])[0]
    below = recover_rank(gamma, basis, coords, lo - 1.0)
    above = recover_rank(gamma, basis, coords, hi + 1.0)
    assert below.u == RANK_FLOOR and below.clamped
    assert above.u == RANK_CEIL and above.clamped


def test_rank_bracket(curve, rng):
    basis, gamma, coords = curve
    ys = quantile_curve(gamma, basis, coords, rng.uniform(0.01, 0.99, 50))
    u, clamped = recover_ranks(gamma, basis, np.tile(coords, (50, 1)), ys)
    assert not clamped.any()
    d = 1e-4
    q_lo = np.array([quantile_curve(gamma, basis, coords, [v - d])[0] for v in u])
    q_hi = np.array([quantile_curve(gamma, basis, coords, [v + d])[0] for v in u])
    assert np.all(q_lo <= ys) and np.all(ys <= q_hi)


def test_flat_curve_rejected():
    basis = SplineBasis.equispaced(1)
    gamma = np.zeros((2, basis.H))
    gamma[:, 0] = 1.0
    with pytest.raises(NonInvertibleCurve, match="non-invertible"):
        recover_rank(gamma, basis, np.array([0.5, 0.5]), 1.0)


def test_rank_matrix(curve, rng):
    basis, gamma, _ = curve
    fits = [SqvarFit(gamma=gamma, lambda_used=0.0, equation_index=i, objective_value=0.0)
            for i in range(2)]
    C = rng.dirichlet(np.ones(3), size=40)
    U = rng.uniform(0.05, 0.95, (40, 2))
    Y = np.column_stack([np.einsum("mk,kh,mh->m", C, gamma, basis.design(U[:, i]))
                         for i in range(2)])
    rm = recover_rank_matrix(fits, C, Y, basis)
    assert rm.u_hat.shape == (2, 40) and rm.n_clamped == 0
    np.testing.assert_allclose(rm.u_hat, U.T, atol=1e-6)


def _equicorrelated_ranks(kappa, n, T, seed):
    return CopulaModel(kappa, n).sample(np.random.default_rng(seed), T).T


def test_copula_independent():
    U = np.random.default_rng(0).uniform(size=(3, 2000))
    assert -0.1 <= fit_gaussian_copula(U).kappa <= 0.1


def test_copula_correlated():
    m = fit_gaussian_copula(_equicorrelated_ranks(0.3, 3, 2000, 1))
    assert 0.2 <= m.kappa <= 0.4
    assert not m.at_boundary


def test_copula_comonotone_hits_upper_bound():
    u = np.random.default_rng(2).uniform(size=500)
    m = fit_gaussian_copula(np.vstack([u, u]))
    assert m.kappa == pytest.approx(1 - 1e-4)
    assert m.at_boundary


@pytest.mark.parametrize("U", [np.ones((2, 50)) * 0.5, np.random.default_rng(0).uniform(size=(1, 50)),
                               np.random.default_rng(0).uniform(size=(2, 5))])
def test_copula_input_errors(U):
    with pytest.raises(ValueError):
        fit_gaussian_copula(U)


def test_copula_loglik_matches_multivariate_normal():
    kappa, n = 0.35, 4
    Z = CopulaModel(kappa, n).sample_scores(np.random.default_rng(3), 200)
    R = CopulaModel(kappa, n).corr()
    ref = (stats.multivariate_normal(np.zeros(n), R).logpdf(Z).sum()
           - stats.norm.logpdf(Z).sum())
    assert copula_loglik(kappa, Z) == pytest.approx(ref, rel=1e-10)


def test_loglik_interior_optimality():
    U = _equicorrelated_ranks(0.2, 3, 800, 4)
    m = fit_gaussian_copula(U)
    Z = stats.norm.ppf(U).T
    for k in (0.0, -0.5 + 1e-4, 1 - 1e-4):
        assert m.loglik >= copula_loglik(k, Z)


def test_conditional_factor():
    cop = CopulaModel(0.4, 3)
    r, S = cop.conditional_factor(1)
    R = cop.corr()
    np.testing.assert_allclose(r, [0.4, 0.4])
    np.testing.assert_allclose(S @ S.T, R[np.ix_([0, 2], [0, 2])] - np.outer(r, r), atol=1e-14)


def test_kappa_box():
    with pytest.raises(ValueError):
        CopulaModel(-0.6, 3)


def test_covariance_constant_intercept():
    est = innovation_covariance([lambda u: np.full_like(u, 2.0)] * 2,
                                np.random.default_rng(0).uniform(size=(2, 30)))
    assert np.all(est.eps_hat == 0) and np.all(est.cov_hat == 0)


def test_covariance_scalar():
    U = np.random.default_rng(1).uniform(size=(1, 100))
    est = innovation_covariance([stats.norm.ppf], U)
    v = stats.norm.ppf(U[0])
    assert est.cov_hat.shape == (1, 1)
    assert est.cov_hat[0, 0] == pytest.approx(np.var(v), rel=1e-12)
    assert est.mu_hat[0] == pytest.approx(v.mean(), rel=1e-12)


def test_covariance_independent_and_permutation_invariant():
    rng = np.random.default_rng(2)
    U = rng.uniform(size=(3, 2000))
    funcs = [stats.norm.ppf, lambda u: u**2, lambda u: np.log(u / (1 - u))]
    est = innovation_covariance(funcs, U)
    d = np.sqrt(np.diag(est.cov_hat))
    corr = est.cov_hat / np.outer(d, d)
    assert np.all(np.abs(corr[~np.eye(3, dtype=bool)]) < 0.1)
    assert np.linalg.eigvalsh(est.cov_hat).min() >= -1e-10
    perm = innovation_covariance(funcs, U[:, rng.permutation(2000)])
    np.testing.assert_allclose(perm.cov_hat, est.cov_hat, atol=1e-12)
