"""Posterior-predictive interpolation at ungauged sites."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .data import CompletedData, ObservedDataset, as_completed
from .distributions import PosDefMatrix, RandomStream, cholesky_jitter, random_stream
from .model import ModelSpec, ParameterState, residuals
from .samplers import PosteriorSample
from .spatial import DeformPrior, SiteSet, build_B, build_cross_B, gaussian_kernel, pairwise_distances


@dataclass(frozen=True)
class UngaugedSet:
    coords: np.ndarray  # 2 x N*
    X: np.ndarray  # T x N* x p
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, float)
        X = np.asarray(self.X, float)
        if coords.ndim != 2 or coords.shape[0] != 2 or coords.shape[1] == 0:
            raise ValueError(f"ungauged coords must be 2 x N* with N* > 0, got {coords.shape}")
        if X.ndim != 3 or X.shape[1] != coords.shape[1]:
            raise ValueError("ungauged covariates must be T x N* x p")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "X", X)
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(f"u{i + 1}" for i in range(coords.shape[1])))

    @property
    def count(self) -> int:
        return self.coords.shape[1]

    def check_against(self, sites: SiteSet, spec: ModelSpec | None = None) -> None:
        d = pairwise_distances(self.coords, sites.coords)
        hit = np.argwhere(d <= 1e-12)
        if len(hit):
            u, g = hit[0]
            raise ValueError(f"ungauged site {self.ids[u]} coincides with gauged site {sites.ids[g]}")
        if spec is not None and self.X.shape[0] != spec.T or (spec is not None and self.X.shape[2] != spec.p):
            raise ValueError("ungauged covariates do not match the model's T and p")


@dataclass
class PredictiveDraws:
    Dstar: np.ndarray  # K x 2 x N*
    Ystar: np.ndarray  # K x T x N* x q

    @property
    def K(self) -> int:
        return self.Ystar.shape[0]

    def mean(self) -> np.ndarray:
        return self.Ystar.mean(axis=0)

    def quantiles(self, probs) -> np.ndarray:
        """Empirical quantiles over draws (numpy's default linear rule)."""
        return np.quantile(self.Ystar, probs, axis=0)


def deformation_conditional(D: np.ndarray, S: np.ndarray, Sstar: np.ndarray, prior: DeformPrior):
    """Mean, row variances and column covariance of ``D* | D``."""
    rgu = gaussian_kernel(S, Sstar, prior.psi)
    rstar = gaussian_kernel(Sstar, Sstar, prior.psi)
    weights = prior.Rd.solve(rgu)  # Rd^{-1} R_gu
    mean = Sstar + (D - S) @ weights
    col = rstar - rgu.T @ weights
    return mean, prior.sigma2d.copy(), 0.5 * (col + col.T)


def extend_deformation(state: ParameterState, sites: SiteSet, ungauged: UngaugedSet,
                       prior: DeformPrior, rng: RandomStream) -> np.ndarray:
    mean, rowvar, col = deformation_conditional(state.D, sites.coords, ungauged.coords, prior)
    z = rng.standard_normal(mean.shape)
    return mean + np.sqrt(rowvar)[:, None] * (z @ cholesky_jitter(col).T)


def predictive_moments(spec: ModelSpec, state: ParameterState, completed, ungauged: UngaugedSet,
                       Dstar: np.ndarray, B: PosDefMatrix | None = None):
    """Per-time means (T x N* x q) and the shared row covariance ``V (B* - B_ug B^-1 B_gu)``.

    The column covariance is ``state.Sigma``.
    """
    Y = as_completed(completed)
    B = build_B(state.D, state.phi) if B is None else B
    bug = build_cross_B(Dstar, state.D, state.phi)
    bstar = build_cross_B(Dstar, Dstar, state.phi)
    gain = B.solve(bug.T).T  # B_ug B^{-1}
    E = residuals(spec, state.betas, Y)
    mean = np.einsum("tnp,tpq->tnq", ungauged.X, state.betas[1:]) + np.einsum("un,tnq->tuq", gain, E)
    row = bstar - gain @ bug.T
    return mean, state.V * 0.5 * (row + row.T)


def predict_responses(spec, state, completed, ungauged, Dstar, rng: RandomStream, B=None) -> np.ndarray:
    """One joint draw of ``Y*_t`` for every t."""
    mean, row = predictive_moments(spec, state, completed, ungauged, Dstar, B)
    lr = cholesky_jitter(row)
    ls = cholesky_jitter(state.Sigma)
    z = rng.standard_normal(mean.shape)
    return mean + lr @ z @ ls.T


def run_interpolation(spec: ModelSpec, data: ObservedDataset, ungauged: UngaugedSet,
                      posterior: PosteriorSample, rng) -> PredictiveDraws:
    """One ``(D*, Y*)`` draw per retained posterior draw, each on its own substream."""
    if posterior.K == 0:
        raise ValueError("posterior sample is empty")
    ungauged.check_against(spec.sites, spec)
    streams = random_stream(rng).spawn(posterior.K)
    T, q = spec.T, spec.q
    dstar = np.empty((posterior.K, 2, ungauged.count))
    ystar = np.empty((posterior.K, T, ungauged.count, q))
    for k in range(posterior.K):
        state = posterior.state(k)
        imputed = None if posterior.imputed is None else posterior.imputed[k]
        completed = CompletedData.from_dataset(data, imputed)
        if spec.variant.deforms:
            dstar[k] = extend_deformation(state, spec.sites, ungauged, spec.deform_prior, streams[k])
        else:
            dstar[k] = ungauged.coords
        ystar[k] = predict_responses(spec, state, completed, ungauged, dstar[k], streams[k])
    return PredictiveDraws(dstar, ystar)
