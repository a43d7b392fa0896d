"""Conditional imputation of missing responses and the data-augmentation chain."""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .data import CompletedData, ObservedDataset, TimeClass, vec
from .distributions import PosDefMatrix, RandomStream, cholesky_jitter
from .model import ModelSpec, ParameterState
from .samplers import ChainConfig, PosteriorSample, Tunings, _hybrid_step, run_chain
from .spatial import build_B


def joint_covariance(state: ParameterState, B: PosDefMatrix | None = None) -> np.ndarray:
    """``Sigma kron B`` (without ``V``), the column-stacked covariance of ``Y_t``."""
    B = build_B(state.D, state.phi) if B is None else B
    return np.kron(state.Sigma, np.asarray(B))


def imputation_moments(spec: ModelSpec, state: ParameterState, data: ObservedDataset, t: int,
                       delta: np.ndarray | None = None):
    """Mean and covariance of the missing block of ``vec(Y_t)`` (0-based ``t``).

    Partially observed times condition on the observed block through the
    Schur complement; fully missing times use the marginal law.
    """
    layout = data.layouts[t]
    if delta is None:
        delta = joint_covariance(state)
    mu = vec(spec.X[t] @ state.betas[t + 1])
    mis, obs = layout.mis_idx, layout.obs_idx
    if layout.kind is TimeClass.COMPLETE:
        return np.empty(0), np.empty((0, 0))
    d_mm = delta[np.ix_(mis, mis)]
    if layout.kind is TimeClass.MISSING:
        return mu[mis], state.V * d_mm
    y = vec(data.responses[t])
    d_oo = delta[np.ix_(obs, obs)]
    d_mo = delta[np.ix_(mis, obs)]
    chol = cholesky_jitter(d_oo)
    gain = sla.cho_solve((chol, True), d_mo.T, check_finite=False).T
    mean = mu[mis] + gain @ (y[obs] - mu[obs])
    cov = d_mm - gain @ d_mo.T
    return mean, state.V * 0.5 * (cov + cov.T)


def _batched_moments(mu, y, delta, ts, obs, mis):
    """Conditional moments for a stack of layouts sharing ``n_obs`` and ``n_mis``."""
    d_oo = delta[obs[:, :, None], obs[:, None, :]]
    d_mo = delta[mis[:, :, None], obs[:, None, :]]
    d_mm = delta[mis[:, :, None], mis[:, None, :]]
    rows = ts[:, None]
    np.linalg.cholesky(d_oo)  # raises if any observed block is not SPD
    gain = np.linalg.solve(d_oo, d_mo.transpose(0, 2, 1)).transpose(0, 2, 1)  # D_mo D_oo^{-1}
    resid = y[rows, obs] - mu[rows, obs]
    mean = mu[rows, mis] + np.einsum("gmo,go->gm", gain, resid)
    cov = d_mm - gain @ d_mo.transpose(0, 2, 1)
    return mean, 0.5 * (cov + cov.transpose(0, 2, 1))


def impute_missing(spec: ModelSpec, state: ParameterState, data: ObservedDataset, rng: RandomStream,
                   B: PosDefMatrix | None = None) -> CompletedData:
    """Draw every missing cell from its conditional law given the current state.

    Time points are processed in groups sharing the same observed/missing
    counts; groups are visited in order of first appearance.
    """
    if data.n_missing == 0:
        return CompletedData(data.responses.copy(), data.observed)
    delta = joint_covariance(state, B)
    filled = data.responses.copy()
    N, q = data.N, data.q
    mu = np.einsum("tnp,tpq->tqn", spec.X, state.betas[1:]).reshape(data.T, N * q)
    y = data.responses.transpose(0, 2, 1).reshape(data.T, N * q)
    groups: dict[tuple[int, int], list[int]] = {}
    for t, layout in enumerate(data.layouts):
        if layout.kind is not TimeClass.COMPLETE:
            groups.setdefault((layout.n_obs, layout.n_mis), []).append(t)
    for (n_obs, n_mis), times in groups.items():
        ts = np.array(times)
        mis = np.stack([data.layouts[t].mis_idx for t in times])
        if n_obs == 0:
            mean = mu[ts[:, None], mis]
            cov = np.broadcast_to(delta[np.ix_(mis[0], mis[0])], (len(ts), n_mis, n_mis))
        else:
            obs = np.stack([data.layouts[t].obs_idx for t in times])
            try:
                mean, cov = _batched_moments(mu, y, delta, ts, obs, mis)
            except np.linalg.LinAlgError:
                moments = [imputation_moments(spec, state, data, t, delta) for t in times]
                mean = np.stack([m for m, _ in moments])
                cov = np.stack([c for _, c in moments]) / state.V
        try:
            chol = np.linalg.cholesky(state.V * cov)
        except np.linalg.LinAlgError:
            chol = np.stack([cholesky_jitter(state.V * c) for c in cov])
        draw = mean + np.einsum("gij,gj->gi", chol, rng.standard_normal((len(ts), n_mis)))
        filled[ts[:, None], mis % N, mis // N] = draw
    return CompletedData(filled, data.observed)


def da_step(spec, state, data: ObservedDataset, rng: RandomStream, tunings: Tunings | None = None):
    """Imputation followed by one hybrid sweep on the completed data."""
    completed = impute_missing(spec, state, data, rng)
    new, _ = _hybrid_step(spec, state, completed.filled, rng, tunings or Tunings())
    new.imputed = completed.imputed_values()
    return new, completed


def _impute_hook(spec, state, data, rng):
    return impute_missing(spec, state, data, rng)


def run_da_chain(spec: ModelSpec, data: ObservedDataset, config: ChainConfig,
                 tunings: Tunings | None = None, **kwargs) -> PosteriorSample:
    """Data-augmentation MCMC; retained draws pair each state with its imputations.

    Imputation and posterior updates use separate random substreams, so with
    no missing cells the output is bit-identical to :func:`run_chain`.
    """
    return run_chain(spec, data, config, tunings, impute=_impute_hook, **kwargs)
