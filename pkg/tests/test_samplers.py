import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from spatiodlm.distributions import random_stream
from spatiodlm.model import Variant, logpost
from spatiodlm.samplers import (
    ChainConfig,
    D_log_target,
    MhTuning,
    SliceTuning,
    Tunings,
    backward_coefficients,
    ffbs_backward,
    ffbs_beta,
    ffbs_filter,
    gibbs_Sigma_diag,
    gibbs_Sigma_full,
    gibbs_V,
    hybrid_step,
    mh_phi,
    phi_log_target,
    run_chain,
    sigma_diag_posterior_params,
    sigma_full_posterior_params,
    slice_D,
    v_posterior_params,
)
from spatiodlm.spatial import build_B

from conftest import dense_beta_posterior, tiny_problem


def exact_backward_moments(spec, filt):
    """Marginal means and row covariances implied by the backward recursion."""
    cs, ks, hs = backward_coefficients(spec, filt)
    T = spec.T
    means, covs = [None] * (T + 1), [None] * (T + 1)
    means[T], covs[T] = filt.m[T], filt.C[T]
    for t in range(T - 1, -1, -1):
        means[t] = cs[t] + ks[t] @ means[t + 1]
        covs[t] = ks[t] @ covs[t + 1] @ ks[t].T + hs[t]
    return means, covs


@pytest.mark.parametrize("N,p,q,T", [(2, 1, 1, 3), (3, 2, 1, 4), (3, 2, 2, 3), (4, 1, 3, 2), (3, 2, 2, 0)])
def test_ffbs_moments_match_dense_conditioning(N, p, q, T):
    spec, state, Y = tiny_problem(11 + N + T, N=N, p=p, q=q, T=T, variant="M2")
    B = build_B(state.D, state.phi)
    filt = ffbs_filter(spec, Y, B)
    means, covs = exact_backward_moments(spec, filt)
    mu, cov = dense_beta_posterior(spec, state.V, state.Sigma, B.values, Y)
    k = p * q
    for t in range(T + 1):
        np.testing.assert_allclose(means[t].ravel(order="F"), mu[t * k:(t + 1) * k], atol=1e-8)
        np.testing.assert_allclose(np.kron(state.Sigma, state.V * covs[t]), cov[t * k:(t + 1) * k, t * k:(t + 1) * k],
                                   atol=1e-8)


def test_ffbs_draws_match_dense_moments_mc():
    spec, state, Y = tiny_problem(21, N=3, p=2, q=2, T=3, variant="M2")
    B = build_B(state.D, state.phi)
    draws = ffbs_beta(spec, state, Y, random_stream(1), B, size=200_000)
    flat = draws.transpose(0, 1, 3, 2).reshape(len(draws), -1)
    mu, cov = dense_beta_posterior(spec, state.V, state.Sigma, B.values, Y)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(flat.mean(0) - mu) <= 0.02 * sd)
    emp = np.cov(flat.T)
    assert np.all(np.abs(emp - cov) <= 0.03 * np.outer(sd, sd))


def test_ffbs_tiny_evolution_variance_freezes_states():
    spec, state, Y = tiny_problem(4, N=3, p=2, q=1, T=6, variant="M2")
    spec.W = 1e-12 * np.eye(2)
    spec.__post_init__()
    spec.G = np.broadcast_to(np.eye(2), spec.G.shape).copy()
    betas = ffbs_beta(spec, state, Y, random_stream(2))
    assert np.abs(np.diff(betas, axis=0)).max() < 1e-4


@pytest.mark.parametrize("variant", list(Variant))
def test_conjugate_parameters_match_independent_assembly(variant):
    spec, state, Y = tiny_problem(8, N=5, p=2, q=3, T=4, variant=variant)
    pri = spec.priors
    p, q, T, N = spec.p, spec.q, spec.T, spec.N
    B = build_B(state.D, state.phi).values
    binv, winv, c0inv = np.linalg.inv(B), np.linalg.inv(spec.W), np.linalg.inv(spec.C0)
    total = (state.betas[0] - spec.M0).T @ c0inv @ (state.betas[0] - spec.M0)
    for t in range(1, T + 1):
        dev = state.betas[t] - spec.G[t - 1] @ state.betas[t - 1]
        e = Y[t - 1] - spec.X[t - 1] @ state.betas[t]
        total += dev.T @ winv @ dev + e.T @ binv @ e
    a_v, b_v = v_posterior_params(spec, state, Y)
    assert a_v == pri.a_V + p * q / 2 + T * p * q / 2 + T * N * q / 2
    assert b_v == pytest.approx(pri.b_V + 0.5 * np.trace(np.linalg.inv(state.Sigma) @ total), rel=1e-8)
    a_s, b_s = sigma_full_posterior_params(spec, state, Y)
    assert a_s == pri.a_Sigma + p + T * p + T * N
    np.testing.assert_allclose(b_s, pri.b_Sigma + total / state.V, rtol=1e-8)
    a_d, b_d = sigma_diag_posterior_params(spec, state, Y)
    np.testing.assert_array_equal(a_d, pri.a_Sigma_diag + p / 2 + T * p / 2 + T * N / 2)
    np.testing.assert_allclose(b_d, pri.b_Sigma_diag + 0.5 * np.diag(total) / state.V, rtol=1e-8)


def test_gibbs_V_draws_follow_inverse_gamma():
    spec, state, Y = tiny_problem(9)
    a, b = v_posterior_params(spec, state, Y)
    rng = random_stream(3)
    draws = np.array([gibbs_V(spec, state, Y, rng) for _ in range(5000)])
    assert stats.kstest(draws, stats.invgamma(a, scale=b).cdf).pvalue > 1e-3


def test_full_and_diagonal_sigma_updates_agree_when_q_is_one():
    from spatiodlm.model import HyperParams

    a, b = 0.6, 0.4
    pri = HyperParams(a_Sigma=a, b_Sigma=np.array([[b]]), a_Sigma_diag=np.array([a / 2]),
                      b_Sigma_diag=np.array([b / 2]))
    spec2, state, Y = tiny_problem(10, q=1, variant="M2", priors=pri)
    spec1, _, _ = tiny_problem(10, q=1, variant="M1", priors=pri)
    rng = random_stream(4)
    full = np.array([gibbs_Sigma_full(spec2, state, Y, rng)[0, 0] for _ in range(4000)])
    diag = np.array([gibbs_Sigma_diag(spec1, state, Y, rng)[0, 0] for _ in range(4000)])
    assert stats.ks_2samp(full, diag).pvalue > 1e-3
    with pytest.raises(ValueError):
        gibbs_Sigma_full(spec1, state, Y, rng)


def test_phi_target_differences_match_log_posterior():
    spec, state, Y = tiny_problem(12)
    s2 = state.copy()
    s2.phi = 2.1
    lhs = phi_log_target(spec, state, Y, 2.1) - phi_log_target(spec, state, Y, state.phi)
    assert lhs == pytest.approx(logpost(spec, s2, Y) - logpost(spec, state, Y), rel=1e-9)


def test_deformation_target_differences_match_log_posterior():
    spec, state, Y = tiny_problem(13, N=5)
    s2 = state.copy()
    s2.D[:, 3] += [0.2, -0.1]
    lhs = D_log_target(spec, state, Y, s2.D) - D_log_target(spec, state, Y, state.D)
    assert lhs == pytest.approx(logpost(spec, s2, Y) - logpost(spec, state, Y), rel=1e-9)


def _normalized_mean(logf, lo, hi):
    grid = np.linspace(lo, hi, 4001)
    lf = np.array([logf(x) for x in grid])
    w = np.exp(lf - lf.max())
    return integrate.trapezoid(grid * w, grid) / integrate.trapezoid(w, grid)


def test_mh_phi_leaves_full_conditional_invariant():
    spec, state, Y = tiny_problem(14, N=4, T=3)
    rng = random_stream(5)
    tuning = MhTuning(log_step=0.8)
    cur = state.copy()
    draws = np.empty(30_000)
    for k in range(len(draws)):
        cur.phi = mh_phi(spec, cur, Y, rng, tuning)
        draws[k] = cur.phi
    target_mean = _normalized_mean(lambda x: phi_log_target(spec, state, Y, x), 1e-4, 40.0)
    assert 0.1 < tuning.acceptance_rate < 0.95
    assert draws.mean() == pytest.approx(target_mean, rel=0.05)


def test_slice_sampler_leaves_full_conditional_invariant():
    spec, state, Y = tiny_problem(15, N=3, T=2, variant="M4")
    rng = random_stream(6)
    cur = state.copy()
    tuning = SliceTuning()
    draws = np.empty((8000, 2))
    for k in range(len(draws)):
        cur.D = slice_D(spec, cur, Y, rng, tuning)
        draws[k] = cur.D[:, 2]
    np.testing.assert_array_equal(cur.D[:, :2], spec.S[:, :2])
    # marginal means of the free site from a 2-D grid integral
    xs = np.linspace(spec.S[0, 2] - 2.5, spec.S[0, 2] + 2.5, 161)
    ys = np.linspace(spec.S[1, 2] - 2.5, spec.S[1, 2] + 2.5, 161)
    lf = np.empty((len(xs), len(ys)))
    D = state.D.copy()
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            D[:, 2] = x, y
            lf[i, j] = D_log_target(spec, state, Y, D)
    w = np.exp(lf - lf.max())
    w /= w.sum()
    ex, ey = (w.sum(1) * xs).sum(), (w.sum(0) * ys).sum()
    sx = np.sqrt((w.sum(1) * (xs - ex) ** 2).sum())
    assert abs(draws[:, 0].mean() - ex) < 0.1 * sx
    assert abs(draws[:, 1].mean() - ey) < 0.1 * sx
    assert tuning.n_exhausted == 0


def test_slice_rejects_isotropic_variants(rng):
    spec, state, Y = tiny_problem(16, variant="M2")
    with pytest.raises(ValueError):
        slice_D(spec, state, Y, rng, SliceTuning())


@pytest.mark.parametrize("variant", list(Variant))
def test_hybrid_step_respects_variant_structure(variant):
    spec, state, Y = tiny_problem(17, variant=variant)
    rng = random_stream(7)
    cur = state
    for _ in range(5):
        cur = hybrid_step(spec, cur, Y, rng)
        cur.check(spec)
    if not variant.deforms:
        assert np.array_equal(cur.D, spec.S)
    if not variant.full_sigma:
        assert cur.Sigma[0, 1] == 0.0


def test_chain_config_indices():
    cfg = ChainConfig(20000, 5000, 15)
    idx = cfg.retained_indices()
    assert cfg.K == 1000 and idx[0] == 5001 and idx[1] == 5016 and idx[-1] == 19986
    assert ChainConfig(50000, 25000, 25).retained_indices()[-1] == 49976
    with pytest.raises(ValueError):
        ChainConfig(100, 50, 10, K=10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(0, 400), st.integers(1, 30))
def test_chain_config_indices_property(iterations, burn_in, thin):
    if burn_in >= iterations:
        with pytest.raises(ValueError):
            ChainConfig(iterations, burn_in, thin)
        return
    cfg = ChainConfig(iterations, burn_in, thin)
    idx = cfg.retained_indices()
    assert idx[0] == burn_in + 1 and idx[-1] <= iterations and idx[-1] + thin > iterations
    assert np.all(np.diff(idx) == thin)


def test_run_chain_is_deterministic_and_records_trace():
    spec, state, Y = tiny_problem(18, variant="M4")
    cfg = ChainConfig(60, 20, 4, seed=9)
    a = run_chain(spec, Y, cfg, state0=state)
    b = run_chain(spec, Y, cfg, state0=state)
    assert np.array_equal(a.betas, b.betas) and np.array_equal(a.D, b.D) and np.array_equal(a.phi, b.phi)
    assert a.K == cfg.K and a.trace.shape == (60, 3)
    assert np.all(np.isfinite(a.trace[:, 1]))
    c = run_chain(spec, Y, ChainConfig(60, 20, 4, seed=10), state0=state)
    assert not np.array_equal(a.phi, c.phi)


def test_mh_adaptation_only_moves_step_during_burn_in():
    spec, state, Y = tiny_problem(19, variant="M2")
    tunings = Tunings(MhTuning(log_step=5.0, adapt_window=10))
    run_chain(spec, Y, ChainConfig(200, 100, 1, seed=1), tunings, state0=state)
    step_after = tunings.mh.log_step
    assert step_after < 5.0
    tunings2 = Tunings(MhTuning(log_step=5.0, adapt_window=10))
    run_chain(spec, Y, ChainConfig(200, 0, 1, seed=1), tunings2, state0=state)
    assert tunings2.mh.log_step == 5.0
