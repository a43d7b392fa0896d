import math

import numpy as np
import pytest
from scipy import stats

from spatiodlm.simulate import (
    SimConfig, build_B_augmented, default_gauged_coords, default_lambda, generate, simulation_model_spec,
    true_deformation,
)
from spatiodlm.spatial import SiteSet, build_B, build_cross_B, pairwise_distances


def test_grid_has_anchors_first_and_sixteen_distinct_sites():
    g = default_gauged_coords()
    assert g.shape == (2, 16)
    np.testing.assert_array_equal(g[:, 0], [0, 0])
    np.testing.assert_array_equal(g[:, 1], [1, 1])
    assert len({tuple(c) for c in g.T}) == 16


def test_lambda_is_scaled_rotation():
    lam = default_lambda()
    c = s = math.sqrt(0.5)
    np.testing.assert_allclose(lam, np.diag([1, 3]) @ np.array([[c, s], [-s, c]]))
    np.testing.assert_allclose(np.linalg.svd(lam, compute_uv=False), [3, 1])


def test_masked_count_per_variable_and_time():
    out = generate(SimConfig(T=30, gamma=0.15, seed=1))
    assert out.config.n_masked == 2
    np.testing.assert_array_equal(np.isnan(out.data.responses).sum(axis=1), 2)


def test_zero_gamma_leaves_data_complete():
    out = generate(SimConfig(T=10, gamma=0.0, seed=2))
    assert out.data.n_missing == 0
    np.testing.assert_array_equal(out.data.responses, out.complete)


def test_masked_plus_observed_reconstructs_complete():
    out = generate(SimConfig(T=20, seed=3))
    obs = out.data.observed
    np.testing.assert_array_equal(out.data.responses[obs], out.complete[obs])
    assert np.all(np.isfinite(out.complete))


def test_missingness_is_uniform_over_cells():
    out = generate(SimConfig(T=2000, gamma=0.3, seed=4))
    rate = np.isnan(out.data.responses).mean(axis=0)
    p = 4 / 16
    se = math.sqrt(p * (1 - p) / 2000)
    assert np.all(np.abs(rate - p) < 4 * se)


def test_augmented_kernel_blocks():
    cfg = SimConfig(T=5)
    sites = SiteSet(cfg.gauged)
    D, Ds = true_deformation(cfg, sites)
    aug = np.asarray(build_B_augmented(D, Ds, cfg.phi))
    np.testing.assert_allclose(aug[:16, :16], np.asarray(build_B(D, cfg.phi)))
    np.testing.assert_allclose(aug[16:, :16], build_cross_B(Ds, D, cfg.phi))
    np.testing.assert_allclose(aug[16:, 16:], build_cross_B(Ds, Ds, cfg.phi))


def test_true_deformation_fixes_anchors():
    cfg = SimConfig(T=5)
    D, Ds = true_deformation(cfg, SiteSet(cfg.gauged))
    np.testing.assert_array_equal(D[:, :2], cfg.gauged[:, :2])
    np.testing.assert_allclose(D[:, 2:], cfg.Lambda @ cfg.gauged[:, 2:])
    np.testing.assert_allclose(Ds, cfg.Lambda @ cfg.ungauged)


def test_generation_is_deterministic_per_seed():
    a, b, c = generate(SimConfig(T=15, seed=5)), generate(SimConfig(T=15, seed=5)), generate(SimConfig(T=15, seed=6))
    assert np.array_equal(a.complete, b.complete) and np.array_equal(a.ungauged_truth, b.ungauged_truth)
    assert np.array_equal(np.isnan(a.data.responses), np.isnan(b.data.responses))
    assert not np.array_equal(a.complete, c.complete)


def test_covariates_share_intercept_and_uniform_slope():
    out = generate(SimConfig(T=50, seed=7))
    assert np.all(out.X[..., 0] == 1) and np.all(out.ungauged.X[..., 0] == 1)
    assert 0 <= out.X[..., 1].min() and out.X[..., 1].max() <= 1


def test_empirical_correlation_follows_deformed_distance():
    out = generate(SimConfig(T=500, gamma=0.0, seed=8))
    mean = np.einsum("tnp,tpq->tnq", out.X, out.truth.betas[1:])
    resid = (out.complete - mean)[..., 0]
    corr = np.corrcoef(resid.T)
    iu = np.triu_indices(16, 1)
    deformed = pairwise_distances(out.truth.D)[iu]
    geographic = pairwise_distances(out.config.gauged)[iu]
    rho_def = stats.spearmanr(corr[iu], deformed).statistic
    rho_geo = stats.spearmanr(corr[iu], geographic).statistic
    assert rho_def < rho_geo and rho_def < -0.5


def test_fitting_spec_uses_fit_evolution_scale():
    out = generate(SimConfig(T=40, seed=9))
    spec = simulation_model_spec(out, "M3")
    np.testing.assert_allclose(spec.W, 0.05 / 40 * np.eye(2))
    np.testing.assert_allclose(spec.C0, np.eye(2))
    assert spec.variant.deforms and not spec.variant.full_sigma


@pytest.mark.parametrize("kw", [dict(T=0), dict(gamma=1.0), dict(gamma=-0.1)])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)
