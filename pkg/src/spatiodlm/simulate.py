"""Synthetic data with geometric anisotropy induced by a linear deformation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import ObservedDataset
from .distributions import PosDefMatrix, cholesky_jitter, random_stream
from .interpolation import UngaugedSet
from .model import HyperParams, ModelSpec, ParameterState, Variant
from .spatial import SiteSet, build_B, build_cross_B, rotation


def default_gauged_coords() -> np.ndarray:
    """4 x 4 grid on the unit square; the two anchors (0,0) and (1,1) come first."""
    g = np.array([0.0, 1 / 3, 2 / 3, 1.0])
    pts = [(x, y) for y in g for x in g]
    first = [(0.0, 0.0), (1.0, 1.0)]
    rest = [pt for pt in pts if pt not in first]
    return np.array(first + rest).T


def default_ungauged_coords() -> np.ndarray:
    return np.array([[0.35, 0.55, 0.80], [0.62, 0.28, 0.75]])


def default_lambda() -> np.ndarray:
    return np.diag([1.0, 3.0]) @ rotation(math.pi / 4)


@dataclass
class SimConfig:
    T: int = 100
    gamma: float = 0.15
    seed: int = 0
    V: float = 0.6
    phi: float = 0.4
    Sigma: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.85], [0.85, 1.0]]))
    Lambda: np.ndarray = field(default_factory=default_lambda)
    gauged: np.ndarray = field(default_factory=default_gauged_coords)
    ungauged: np.ndarray = field(default_factory=default_ungauged_coords)
    c0_scale: float = 0.1
    w_factor: float = 0.2

    def __post_init__(self):
        if self.T < 1 or not 0 <= self.gamma < 1:
            raise ValueError("need T >= 1 and gamma in [0, 1)")
        self.Sigma = np.asarray(self.Sigma, float)
        self.Lambda = np.asarray(self.Lambda, float)
        self.gauged = np.asarray(self.gauged, float)
        self.ungauged = np.asarray(self.ungauged, float)

    @property
    def N(self) -> int:
        return self.gauged.shape[1]

    @property
    def n_masked(self) -> int:
        return int(math.floor(self.gamma * self.N))

    @property
    def C0(self) -> np.ndarray:
        return self.c0_scale * np.eye(2)

    @property
    def W(self) -> np.ndarray:
        return (self.w_factor / self.T) * self.C0


@dataclass
class SimOutput:
    config: SimConfig
    truth: ParameterState
    Dstar: np.ndarray
    data: ObservedDataset
    complete: np.ndarray  # gauged responses before masking
    X: np.ndarray
    ungauged: UngaugedSet
    ungauged_truth: np.ndarray  # T x N* x q


def build_B_augmented(deform: np.ndarray, Dstar: np.ndarray, phi: float) -> PosDefMatrix:
    """Joint kernel over gauged then ungauged deformed coordinates."""
    if Dstar.size == 0:
        return build_B(deform, phi)
    return build_B(np.hstack([deform, Dstar]), phi)


def true_deformation(config: SimConfig, sites: SiteSet):
    """Deformed gauged and ungauged coordinates; anchors stay at their geographic positions."""
    D = config.Lambda @ config.gauged
    a, b = sites.anchors
    D[:, [a, b]] = config.gauged[:, [a, b]]
    return D, config.Lambda @ config.ungauged


def generate(config: SimConfig) -> SimOutput:
    rng = random_stream(config.seed)
    sites = SiteSet(config.gauged)
    D, Dstar = true_deformation(config, sites)
    T, N, Ns, q, p = config.T, config.N, config.ungauged.shape[1], 2, 2
    V, Sigma = config.V, config.Sigma
    ls = cholesky_jitter(Sigma)
    l_aug = build_B_augmented(D, Dstar, config.phi).chol
    l_c0 = math.sqrt(V) * cholesky_jitter(config.C0)
    l_w = math.sqrt(V) * cholesky_jitter(config.W)

    betas = np.empty((T + 1, p, q))
    betas[0] = l_c0 @ rng.standard_normal((p, q)) @ ls.T
    X = np.ones((T, N, p))
    Xs = np.ones((T, Ns, p))
    y_all = np.empty((T, N + Ns, q))
    masked = np.zeros((T, N, q), dtype=bool)
    for t in range(1, T + 1):
        betas[t] = betas[t - 1] + l_w @ rng.standard_normal((p, q)) @ ls.T
        u = rng.uniform(size=N + Ns)
        X[t - 1, :, 1] = u[:N]
        Xs[t - 1, :, 1] = u[N:]
        mean = np.vstack([X[t - 1], Xs[t - 1]]) @ betas[t]
        y_all[t - 1] = mean + math.sqrt(V) * l_aug @ rng.standard_normal((N + Ns, q)) @ ls.T
        for i in range(q):
            masked[t - 1, rng.choice(N, config.n_masked, replace=False), i] = True
    complete = y_all[:, :N].copy()
    responses = np.where(masked, np.nan, complete)
    truth = ParameterState(betas, V, Sigma.copy(), config.phi, D)
    return SimOutput(
        config=config, truth=truth, Dstar=Dstar, data=ObservedDataset(sites, responses),
        complete=complete, X=X, ungauged=UngaugedSet(config.ungauged, Xs), ungauged_truth=y_all[:, N:].copy(),
    )


def simulation_model_spec(out: SimOutput, variant: Variant | str = Variant.M4, w_factor: float = 0.05,
                          tau: float = 1.0, psi: float = 10.0, priors: HyperParams | None = None) -> ModelSpec:
    """Fitting configuration used with simulated data: ``W = (w_factor/T) C0`` with ``C0 = I``."""
    T = out.config.T
    return ModelSpec(
        sites=out.data.sites, X=out.X, q=2, variant=variant, M0=np.zeros((2, 2)), C0=np.eye(2),
        W=(w_factor / T) * np.eye(2), priors=priors or HyperParams(), tau=tau, psi=psi,
    )
