"""Model specification, parameter state, likelihood and prior.

Observation ``Y_t ~ MN(X_t beta_t, V B, Sigma)``, evolution
``beta_t ~ MN(G_t beta_{t-1}, V W, Sigma)`` and initial information
``beta_0 ~ MN(M0, V C0, Sigma)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg as sla

from .data import ObservedDataset, as_completed
from .distributions import (
    LOG_2PI,
    PosDefMatrix,
    RandomStream,
    logpdf_gamma,
    logpdf_inverse_gamma,
    logpdf_inverse_wishart,
    logpdf_matrix_normal,
)
from .spatial import DeformPrior, SiteSet, build_B, median_distance


class Variant(str, Enum):
    M1 = "M1"  # no deformation, diagonal Sigma
    M2 = "M2"  # no deformation, full Sigma
    M3 = "M3"  # deformation, diagonal Sigma
    M4 = "M4"  # deformation, full Sigma

    @property
    def deforms(self) -> bool:
        return self in (Variant.M3, Variant.M4)

    @property
    def full_sigma(self) -> bool:
        return self in (Variant.M2, Variant.M4)


def iw_dof(a_sigma: float, q: int) -> float:
    """Standard inverse-Wishart dof for the ``|Sigma|^{-(q + a/2)}`` prior kernel."""
    return a_sigma + q - 1.0


@dataclass
class HyperParams:
    a_V: float = 0.001
    b_V: float = 0.001
    a_Sigma: float = 0.001
    b_Sigma: np.ndarray | None = None
    a_Sigma_diag: np.ndarray | None = None
    b_Sigma_diag: np.ndarray | None = None
    phi_rate: float | None = None

    def resolved(self, q: int, zeta: float) -> "HyperParams":
        b = 0.001 * np.eye(q) if self.b_Sigma is None else np.atleast_2d(np.asarray(self.b_Sigma, float))
        a_d = np.full(q, self.a_Sigma) if self.a_Sigma_diag is None else np.asarray(self.a_Sigma_diag, float)
        b_d = np.diag(b).copy() if self.b_Sigma_diag is None else np.asarray(self.b_Sigma_diag, float)
        rate = 0.3 / zeta if self.phi_rate is None else self.phi_rate
        if self.a_V <= 0 or self.b_V <= 0 or np.any(a_d <= 0) or np.any(b_d <= 0) or not rate > 0:
            raise ValueError("inverse-gamma and gamma hyperparameters must be positive")
        if not iw_dof(self.a_Sigma, q) > q - 1:
            raise ValueError("a_Sigma must be positive")
        if b.shape != (q, q):
            raise ValueError(f"b_Sigma must be {q} x {q}")
        return replace(self, b_Sigma=b, a_Sigma_diag=a_d, b_Sigma_diag=b_d, phi_rate=rate)


@dataclass
class ModelSpec:
    sites: SiteSet
    X: np.ndarray  # T x N x p
    q: int
    variant: Variant = Variant.M4
    G: np.ndarray | None = None  # T x p x p
    W: np.ndarray | None = None
    M0: np.ndarray | None = None
    C0: np.ndarray | None = None
    priors: HyperParams = field(default_factory=HyperParams)
    deform_prior: DeformPrior | None = None
    tau: float = 1.0
    psi: float = 10.0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 3 or self.X.shape[1] != self.sites.count:
            raise ValueError(f"X must be T x N x p with N={self.sites.count}, got {self.X.shape}")
        T, _, p = self.X.shape
        self.G = np.broadcast_to(np.eye(p), (T, p, p)).copy() if self.G is None else np.asarray(self.G, float)
        if self.G.ndim == 2:
            self.G = np.broadcast_to(self.G, (T, p, p)).copy()
        self.W = np.eye(p) if self.W is None else np.atleast_2d(np.asarray(self.W, float))
        self.M0 = np.zeros((p, self.q)) if self.M0 is None else np.atleast_2d(np.asarray(self.M0, float))
        self.C0 = np.eye(p) if self.C0 is None else np.atleast_2d(np.asarray(self.C0, float))
        if self.G.shape != (T, p, p) or self.W.shape != (p, p) or self.C0.shape != (p, p):
            raise ValueError("G, W and C0 must be p x p")
        if self.M0.shape != (p, self.q):
            raise ValueError(f"M0 must be {p} x {self.q}")
        self.zeta = median_distance(self.sites.coords)
        self.priors = self.priors.resolved(self.q, self.zeta)
        if self.deform_prior is None:
            self.deform_prior = DeformPrior.from_sites(self.sites, self.tau, self.psi)
        self.W_pd = PosDefMatrix(self.W)
        self.C0_pd = PosDefMatrix(self.C0)

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def S(self) -> np.ndarray:
        return self.sites.coords


@dataclass
class ParameterState:
    betas: np.ndarray  # (T+1) x p x q
    V: float
    Sigma: np.ndarray
    phi: float
    D: np.ndarray  # 2 x N
    imputed: np.ndarray | None = None

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.betas.copy(), float(self.V), self.Sigma.copy(), float(self.phi), self.D.copy(),
            None if self.imputed is None else self.imputed.copy(),
        )

    def check(self, spec: ModelSpec) -> None:
        """Raise ``ValueError`` if any state invariant is violated."""
        if not (self.V > 0 and self.phi > 0):
            raise ValueError("V and phi must be positive")
        if self.betas.shape != (spec.T + 1, spec.p, spec.q):
            raise ValueError("betas have the wrong shape")
        np.linalg.cholesky(self.Sigma)
        if not spec.variant.full_sigma and np.any(self.Sigma[~np.eye(spec.q, dtype=bool)] != 0.0):
            raise ValueError("Sigma must be diagonal for this variant")
        a, b = spec.sites.anchors
        if not spec.variant.deforms and not np.array_equal(self.D, spec.S):
            raise ValueError("D must equal S for isotropic variants")
        if not np.array_equal(self.D[:, [a, b]], spec.S[:, [a, b]]):
            raise ValueError("anchor columns of D moved")


# --------------------------------------------------------------------------- scatter matrices


def residuals(spec: ModelSpec, betas: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``E_t = Y_t - X_t beta_t`` for t = 1..T."""
    return Y - np.einsum("tnp,tpq->tnq", spec.X, betas[1:])


def observation_scatter(E: np.ndarray, B: PosDefMatrix) -> np.ndarray:
    """``sum_t E_t^T B^{-1} E_t`` (q x q)."""
    T, N, q = E.shape
    z = sla.solve_triangular(B.chol, E.transpose(1, 0, 2).reshape(N, T * q), lower=True, check_finite=False)
    z = z.reshape(N, T, q)
    return np.einsum("ntq,ntr->qr", z, z)


def spatial_scatter(E: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """``sum_t E_t Sigma^{-1} E_t^T`` (N x N), the residual term seen by B."""
    T, N, q = E.shape
    sinv = np.linalg.inv(Sigma)
    return np.einsum("tnq,qr,tmr->nm", E, sinv, E)


def state_scatters(spec: ModelSpec, betas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Initial and evolution scatter matrices (q x q), without the ``1/V`` factor.

    ``(beta_0 - M0)^T C0^{-1} (beta_0 - M0)`` and
    ``sum_t (beta_t - G_t beta_{t-1})^T W^{-1} (beta_t - G_t beta_{t-1})``.
    """
    d0 = betas[0] - spec.M0
    s0 = d0.T @ spec.C0_pd.solve(d0)
    if spec.T == 0:
        return s0, np.zeros_like(s0)
    dev = betas[1:] - np.einsum("tij,tjq->tiq", spec.G, betas[:-1])
    winv = spec.W_pd.inv()
    sevo = np.einsum("tiq,ij,tjr->qr", dev, winv, dev)
    return s0, sevo


# --------------------------------------------------------------------------- densities


def loglik(spec: ModelSpec, state: ParameterState, data, B: PosDefMatrix | None = None) -> float:
    """Sum over t of the Gaussian log-density of ``vec(Y_t)``."""
    Y = as_completed(data)
    if B is None:
        B = build_B(state.D, state.phi)
    T, N, q = Y.shape
    if T == 0:
        return 0.0
    E = residuals(spec, state.betas, Y)
    sobs = observation_scatter(E, B)
    sig = PosDefMatrix(state.Sigma)
    quad = float(np.trace(sig.solve(sobs))) / state.V
    logdet = N * q * math.log(state.V) + N * sig.logdet() + q * B.logdet()
    return -0.5 * (T * N * q * LOG_2PI + T * logdet + quad)


def logprior(spec: ModelSpec, state: ParameterState) -> float:
    pri = spec.priors
    if state.phi <= 0 or state.V <= 0:
        return -math.inf
    q, p, T = spec.q, spec.p, spec.T
    out = logpdf_gamma(state.phi, 1.0, pri.phi_rate)
    if spec.variant.deforms:
        dp = spec.deform_prior
        out += logpdf_matrix_normal(state.D, spec.S, np.diag(dp.sigma2d), dp.Rd)
    out += logpdf_inverse_gamma(state.V, pri.a_V, pri.b_V)
    if spec.variant.full_sigma:
        out += logpdf_inverse_wishart(state.Sigma, iw_dof(pri.a_Sigma, q), pri.b_Sigma)
    else:
        for i in range(q):
            out += logpdf_inverse_gamma(state.Sigma[i, i], pri.a_Sigma_diag[i], pri.b_Sigma_diag[i])
    sig = PosDefMatrix(state.Sigma)
    s0, sevo = state_scatters(spec, state.betas)
    # beta_0 term and evolution terms: Gaussian with covariance V (Sigma kron C0) / V (Sigma kron W)
    out += -0.5 * (
        p * q * LOG_2PI + p * q * math.log(state.V) + p * sig.logdet() + q * spec.C0_pd.logdet()
        + float(np.trace(sig.solve(s0))) / state.V
    )
    if T:
        out += -0.5 * (
            T * (p * q * LOG_2PI + p * q * math.log(state.V) + p * sig.logdet() + q * spec.W_pd.logdet())
            + float(np.trace(sig.solve(sevo))) / state.V
        )
    return out


def logpost(spec: ModelSpec, state: ParameterState, data, B: PosDefMatrix | None = None) -> float:
    lp = logprior(spec, state)
    if not np.isfinite(lp):
        return lp
    return lp + loglik(spec, state, data, B)


# --------------------------------------------------------------------------- initialization


def init_state(spec: ModelSpec, data: ObservedDataset, rng: RandomStream | None = None) -> ParameterState:
    """Deterministic starting point; missing cells start at per-variable observed means.

    ``rng`` is accepted for interface symmetry and is not consumed.
    """
    y = data.responses
    counts = (~np.isnan(y)).sum(axis=(0, 1))
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0]) + 1
        raise ValueError(f"response variable {bad} has no observed entries")
    means = np.nanmean(y, axis=(0, 1))
    betas = np.empty((spec.T + 1, spec.p, spec.q))
    betas[0] = spec.M0
    for t in range(1, spec.T + 1):
        betas[t] = spec.G[t - 1] @ betas[t - 1]
    state = ParameterState(
        betas=betas, V=1.0, Sigma=np.eye(spec.q), phi=1.0 / spec.zeta, D=spec.S.copy(),
    )
    if data.n_missing:
        t, n, i = data.missing_positions()
        state.imputed = means[i].astype(float)
    return state
