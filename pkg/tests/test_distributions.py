import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from spatiodlm.distributions import (
    FactorizationError,
    InverseGammaParams,
    InverseWishartParams,
    MatrixNormalParams,
    PosDefMatrix,
    cholesky_jitter,
    kron_matvec,
    logpdf_gamma,
    logpdf_inverse_gamma,
    logpdf_inverse_wishart,
    logpdf_matrix_normal,
    logpdf_mvn_kron,
    random_stream,
    sample_inverse_gamma,
    sample_inverse_wishart,
    sample_matrix_normal,
)

from conftest import random_spd


def test_posdef_logdet_and_solve(rng):
    a = random_spd(rng, 5)
    pd = PosDefMatrix(a)
    assert pd.logdet() == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)
    b = rng.standard_normal(5)
    np.testing.assert_allclose(pd.solve(b), np.linalg.solve(a, b), rtol=1e-10)
    np.testing.assert_allclose(pd.whiten(b), np.linalg.solve(pd.chol, b), rtol=1e-10)


def test_posdef_rejects_asymmetric():
    with pytest.raises(ValueError):
        PosDefMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))


def test_cholesky_jitter_rescues_semidefinite_and_rejects_indefinite():
    v = np.array([1.0, 1.0, 1.0])
    low = cholesky_jitter(np.outer(v, v))
    assert np.allclose(low @ low.T, np.outer(v, v), atol=1e-6)
    with pytest.raises(FactorizationError):
        cholesky_jitter(np.diag([1.0, -1.0]))


def test_random_stream_is_reproducible_and_spawns_distinct_streams():
    a = random_stream(7).standard_normal(5)
    b = random_stream(7).standard_normal(5)
    assert np.array_equal(a, b)
    s1, s2 = random_stream(7).spawn(2)
    assert not np.array_equal(s1.standard_normal(5), s2.standard_normal(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_kron_matvec_matches_dense(n, q, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((q, q)), r.standard_normal((n, n))
    x = r.standard_normal(n * q)
    np.testing.assert_allclose(kron_matvec(a, b, x), np.kron(a, b) @ x, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.floats(0.1, 5.0), st.integers(0, 10_000))
def test_kron_logpdf_matches_dense_gaussian(n, q, scale, seed):
    r = np.random.default_rng(seed)
    row, col = random_spd(r, n), random_spd(r, q)
    mean, y = r.standard_normal(n * q), r.standard_normal(n * q)
    dense = stats.multivariate_normal(mean, scale * np.kron(col, row)).logpdf(y)
    assert logpdf_mvn_kron(y, mean, col, row, scale) == pytest.approx(dense, rel=1e-9, abs=1e-9)


def test_matrix_normal_sample_moments(rng):
    u, c = random_spd(rng, 3), random_spd(rng, 2)
    mean = rng.standard_normal((3, 2))
    x = sample_matrix_normal(MatrixNormalParams(mean, u, c), rng, size=200_000)
    v = x.transpose(0, 2, 1).reshape(len(x), -1)  # column-stacked vec
    np.testing.assert_allclose(v.mean(0), mean.ravel(order="F"), atol=0.02)
    np.testing.assert_allclose(np.cov(v.T), np.kron(c, u), atol=0.03)
    assert logpdf_matrix_normal(x[0], mean, u, c) == pytest.approx(
        stats.multivariate_normal(mean.ravel(order="F"), np.kron(c, u)).logpdf(x[0].ravel(order="F")), rel=1e-10)


def test_inverse_gamma_moments_and_density(rng):
    draws = sample_inverse_gamma(InverseGammaParams(6.0, 2.0), rng, size=200_000)
    assert draws.mean() == pytest.approx(2.0 / 5.0, rel=0.01)
    assert logpdf_inverse_gamma(0.7, 6.0, 2.0) == pytest.approx(stats.invgamma(6.0, scale=2.0).logpdf(0.7), rel=1e-12)


def test_inverse_gamma_tiny_shape_stays_finite(rng):
    draws = sample_inverse_gamma(InverseGammaParams(0.001, 0.001), rng, size=1000)
    assert np.all(np.isfinite(draws)) and np.all(draws > 0)


def test_inverse_gamma_small_shape_distribution(rng):
    draws = sample_inverse_gamma(InverseGammaParams(0.5, 1.0), rng, size=50_000)
    assert stats.kstest(draws, stats.invgamma(0.5, scale=1.0).cdf).pvalue > 1e-3


def test_inverse_wishart_mean_and_density(rng):
    psi = random_spd(rng, 3)
    dof = 9.0
    draws = np.array([sample_inverse_wishart(InverseWishartParams(dof, psi), rng) for _ in range(40_000)])
    np.testing.assert_allclose(draws.mean(0), psi / (dof - 3 - 1), atol=0.02 * np.abs(psi).max())
    x = draws[0]
    assert logpdf_inverse_wishart(x, dof, psi) == pytest.approx(stats.invwishart(dof, psi).logpdf(x), rel=1e-10)


def test_inverse_wishart_draws_match_scipy_marginals(rng):
    psi = np.array([[2.0, 0.5], [0.5, 1.0]])
    ours = np.array([sample_inverse_wishart(InverseWishartParams(6.0, psi), rng)[0, 1] for _ in range(20_000)])
    ref = stats.invwishart(6.0, psi).rvs(20_000, random_state=1)[:, 0, 1]
    assert stats.ks_2samp(ours, ref).pvalue > 1e-3


def test_inverse_wishart_rejects_small_dof():
    with pytest.raises(ValueError):
        InverseWishartParams(0.5, np.eye(2))


def test_gamma_density():
    assert logpdf_gamma(1.3, 1.0, 0.7) == pytest.approx(stats.gamma(1.0, scale=1 / 0.7).logpdf(1.3), rel=1e-12)
    assert logpdf_gamma(-1.0, 1.0, 1.0) == -math.inf
