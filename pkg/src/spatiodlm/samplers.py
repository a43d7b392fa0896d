"""Single-parameter updates and the hybrid MCMC drivers.

One hybrid sweep updates, in order: the state trajectory by FFBS, the
spatial range by random-walk Metropolis on ``log phi``, the deformation by
coordinate-wise slice sampling (deforming variants only), ``V`` and
``Sigma`` by Gibbs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .data import ObservedDataset, as_completed
from .distributions import (
    FactorizationError,
    InverseGammaParams,
    InverseWishartParams,
    PosDefMatrix,
    RandomStream,
    cholesky_jitter,
    random_stream,
    sample_inverse_gamma,
    sample_inverse_wishart,
)
from .model import (
    ModelSpec,
    ParameterState,
    init_state,
    iw_dof,
    logpost,
    observation_scatter,
    residuals,
    spatial_scatter,
    state_scatters,
)
from .spatial import build_B, pairwise_distances

logger = logging.getLogger(__name__)


@dataclass
class MhTuning:
    """Random-walk scale on ``log phi`` with batch Robbins-Monro adaptation."""

    log_step: float = 0.3
    target_accept: float = 0.44
    adapt_window: int = 50
    n_proposed: int = 0
    n_accepted: int = 0
    last_accepted: bool = False
    _window_accepts: int = field(default=0, repr=False)
    _window_count: int = field(default=0, repr=False)
    _n_windows: int = field(default=0, repr=False)

    def __post_init__(self):
        if not (self.log_step > 0 and 0 < self.target_accept < 1 and self.adapt_window > 0):
            raise ValueError("invalid Metropolis tuning")

    def record(self, accepted: bool) -> None:
        self.n_proposed += 1
        self.n_accepted += int(accepted)
        self.last_accepted = accepted
        self._window_accepts += int(accepted)
        self._window_count += 1

    def adapt(self) -> None:
        if self._window_count < self.adapt_window:
            return
        self._n_windows += 1
        rate = self._window_accepts / self._window_count
        self.log_step *= math.exp((rate - self.target_accept) / math.sqrt(self._n_windows))
        self._window_accepts = self._window_count = 0

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")


@dataclass
class SliceTuning:
    initial_width: np.ndarray | None = None  # per axis; defaults to the prior scale
    max_step_outs: int = 50
    max_shrinks: int = 200
    n_exhausted: int = 0

    def __post_init__(self):
        if self.max_step_outs <= 0:
            raise ValueError("max_step_outs must be positive")
        if self.initial_width is not None and np.any(np.asarray(self.initial_width) <= 0):
            raise ValueError("slice widths must be positive")


@dataclass
class Tunings:
    mh: MhTuning = field(default_factory=MhTuning)
    slice: SliceTuning = field(default_factory=SliceTuning)


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    K: int | None = None

    def __post_init__(self):
        if self.iterations <= 0 or self.burn_in < 0 or self.thin <= 0:
            raise ValueError("iterations and thin must be positive, burn_in non-negative")
        k = (self.iterations - self.burn_in - 1) // self.thin + 1 if self.K is None else self.K
        if k <= 0 or self.burn_in + (k - 1) * self.thin + 1 > self.iterations:
            raise ValueError("burn_in + K*thin exceeds the number of iterations")
        object.__setattr__(self, "K", k)

    def retained_indices(self) -> np.ndarray:
        """1-based iteration numbers of the retained draws."""
        return self.burn_in + 1 + self.thin * np.arange(self.K)


@dataclass
class PosteriorSample:
    indices: np.ndarray
    betas: np.ndarray  # K x (T+1) x p x q
    V: np.ndarray
    Sigma: np.ndarray  # K x q x q
    phi: np.ndarray
    D: np.ndarray  # K x 2 x N
    imputed: np.ndarray | None = None  # K x n_missing, time then vec order
    thin: int = 1
    burn_in: int = 0
    phi_accept_rate: float = float("nan")
    trace: np.ndarray | None = None  # iterations x 3: iteration, logpost, phi accepted

    @property
    def K(self) -> int:
        return len(self.indices)

    def state(self, k: int) -> ParameterState:
        return ParameterState(
            self.betas[k].copy(), float(self.V[k]), self.Sigma[k].copy(), float(self.phi[k]),
            self.D[k].copy(), None if self.imputed is None else self.imputed[k].copy(),
        )

    def VSigma(self, i: int, j: int) -> np.ndarray:
        """Identified scale products ``V * Sigma[i, j]`` (0-based indices)."""
        return self.V * self.Sigma[:, i, j]


# --------------------------------------------------------------------------- conjugate updates


def _total_scatter(spec: ModelSpec, state: ParameterState, Y: np.ndarray, B: PosDefMatrix) -> np.ndarray:
    s0, sevo = state_scatters(spec, state.betas)
    if spec.T == 0:
        return s0 + sevo
    return s0 + sevo + observation_scatter(residuals(spec, state.betas, Y), B)


def v_posterior_params(spec, state, data, B=None) -> tuple[float, float]:
    Y = as_completed(data)
    B = build_B(state.D, state.phi) if B is None else B
    p, q, T, N = spec.p, spec.q, spec.T, spec.N
    a = spec.priors.a_V + p * q / 2 + T * p * q / 2 + T * N * q / 2
    stot = _total_scatter(spec, state, Y, B)
    quad = float(np.trace(np.linalg.solve(state.Sigma, stot)))
    if quad < 0:
        raise FloatingPointError("negative quadratic form in the V update")
    return a, spec.priors.b_V + 0.5 * quad


def sigma_full_posterior_params(spec, state, data, B=None) -> tuple[float, np.ndarray]:
    """``(a', b')`` in the kernel convention ``|Sigma|^{-(q + a'/2)}``."""
    Y = as_completed(data)
    B = build_B(state.D, state.phi) if B is None else B
    a = spec.priors.a_Sigma + spec.p + spec.T * spec.p + spec.T * spec.N
    b = spec.priors.b_Sigma + _total_scatter(spec, state, Y, B) / state.V
    return a, 0.5 * (b + b.T)


def sigma_diag_posterior_params(spec, state, data, B=None) -> tuple[np.ndarray, np.ndarray]:
    Y = as_completed(data)
    B = build_B(state.D, state.phi) if B is None else B
    p, T, N = spec.p, spec.T, spec.N
    a = spec.priors.a_Sigma_diag + p / 2 + T * p / 2 + T * N / 2
    b = spec.priors.b_Sigma_diag + 0.5 * np.diag(_total_scatter(spec, state, Y, B)) / state.V
    if np.any(b <= 0):
        raise FloatingPointError("non-positive scale in the Sigma update")
    return a, b


def gibbs_V(spec, state, data, rng: RandomStream, B=None) -> float:
    a, b = v_posterior_params(spec, state, data, B)
    return sample_inverse_gamma(InverseGammaParams(a, b), rng)


def gibbs_Sigma_full(spec, state, data, rng: RandomStream, B=None) -> np.ndarray:
    if not spec.variant.full_sigma:
        raise ValueError(f"variant {spec.variant.value} uses a diagonal Sigma")
    a, b = sigma_full_posterior_params(spec, state, data, B)
    return sample_inverse_wishart(InverseWishartParams(iw_dof(a, spec.q), PosDefMatrix(b)), rng)


def gibbs_Sigma_diag(spec, state, data, rng: RandomStream, B=None) -> np.ndarray:
    a, b = sigma_diag_posterior_params(spec, state, data, B)
    return np.diag([sample_inverse_gamma(InverseGammaParams(ai, bi), rng) for ai, bi in zip(a, b)])


# --------------------------------------------------------------------------- FFBS


def _inv_small(a: np.ndarray) -> np.ndarray:
    """Inverse of a tiny symmetric matrix; closed form for 1 x 1 and 2 x 2."""
    n = a.shape[0]
    if n == 1:
        return 1.0 / a
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        if det > 0:
            return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    return np.linalg.inv(a)


def _batched_chol(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return np.stack([cholesky_jitter(x) for x in a])


@dataclass
class FilterResult:
    m: np.ndarray  # (T+1) x p x q filtered means
    C: np.ndarray  # (T+1) x p x p filtered row covariances
    Cinv: np.ndarray


def ffbs_filter(spec: ModelSpec, Y: np.ndarray, B: PosDefMatrix) -> FilterResult:
    """Forward filter on p x p row covariances shared by all q columns.

    Every covariance in the model factors as ``V * (Sigma kron .)``, so the
    filtered law is ``beta_t | y_{1:t} ~ MN(m_t, V C_t, Sigma)``.
    """
    T, N, p = spec.X.shape
    q = spec.q
    m = np.empty((T + 1, p, q))
    C = np.empty((T + 1, p, p))
    Cinv = np.empty((T + 1, p, p))
    m[0], C[0], Cinv[0] = spec.M0, spec.C0, spec.C0_pd.inv()
    if T:
        binv_x = sla.cho_solve(
            (B.chol, True), spec.X.transpose(1, 0, 2).reshape(N, T * p), check_finite=False
        ).reshape(N, T, p)
        xbx = np.einsum("tnp,ntr->tpr", spec.X, binv_x)
        xby = np.einsum("ntp,tnq->tpq", binv_x, Y)
    W = spec.W
    for t in range(1, T + 1):
        g = spec.G[t - 1]
        a = g @ m[t - 1]
        r = g @ C[t - 1] @ g.T + W
        rinv = _inv_small(0.5 * (r + r.T))
        prec = rinv + xbx[t - 1]
        prec = 0.5 * (prec + prec.T)
        c = _inv_small(prec)
        Cinv[t] = prec
        C[t] = 0.5 * (c + c.T)
        m[t] = C[t] @ (rinv @ a + xby[t - 1])
    return FilterResult(m, C, Cinv)


def backward_coefficients(spec: ModelSpec, filt: FilterResult):
    """Per-time ``(c_t, K_t, H_t)`` with ``beta_t | beta_{t+1} ~ MN(c_t + K_t beta_{t+1}, V H_t, Sigma)``.

    Uses the information form ``H_t = (C_t^{-1} + G^T W^{-1} G)^{-1}``, which
    stays positive definite as ``W -> 0``.
    """
    T = spec.T
    winv = spec.W_pd.inv()
    gw = spec.G.transpose(0, 2, 1) @ winv  # G_{t+1}^T W^{-1}
    h = np.linalg.inv(filt.Cinv[:T] + gw @ spec.G)
    h = 0.5 * (h + h.transpose(0, 2, 1))
    return h @ (filt.Cinv[:T] @ filt.m[:T]), h @ gw, h


def ffbs_backward(spec, filt: FilterResult, V: float, Sigma: np.ndarray, rng: RandomStream, size=None):
    """Backward sampling; ``size`` draws whole trajectories in one vectorized pass."""
    T, p, q = spec.T, spec.p, spec.q
    batch = () if size is None else (int(size),)
    ls = math.sqrt(V) * cholesky_jitter(Sigma)
    z = rng.standard_normal(batch + (T + 1, p, q))
    out = np.empty(batch + (T + 1, p, q))
    lt = cholesky_jitter(filt.C[T])
    out[..., T, :, :] = filt.m[T] + lt @ z[..., T, :, :] @ ls.T
    cs, ks, hs = backward_coefficients(spec, filt)
    noise = _batched_chol(hs) @ z[..., :T, :, :] @ ls.T if T else None
    for t in range(T - 1, -1, -1):
        out[..., t, :, :] = cs[t] + ks[t] @ out[..., t + 1, :, :] + noise[..., t, :, :]
    return out


def ffbs_beta(spec, state, data, rng: RandomStream, B=None, size=None) -> np.ndarray:
    """Exact joint draw of ``beta_{0:T}`` given ``V, Sigma, phi, D`` and completed data."""
    Y = as_completed(data)
    B = build_B(state.D, state.phi) if B is None else B
    return ffbs_backward(spec, ffbs_filter(spec, Y, B), state.V, state.Sigma, rng, size)


# --------------------------------------------------------------------------- phi


def _chol(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return cholesky_jitter(a)


def _spatial_terms(dist: np.ndarray, phi: float, M: np.ndarray, V: float, Tq: int):
    """B-dependent part of the log-likelihood, with B and its Cholesky factor."""
    b = np.exp(-phi * dist)
    chol = _chol(b)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    z = sla.solve_triangular(chol, M, lower=True, check_finite=False)
    tr = float(np.trace(sla.solve_triangular(chol, z.T, lower=True, check_finite=False)))
    return -0.5 * Tq * logdet - 0.5 * tr / V, b, chol


def _spatial_loglik(dist: np.ndarray, phi: float, M: np.ndarray, V: float, Tq: int):
    val, b, chol = _spatial_terms(dist, phi, M, V, Tq)
    return val, PosDefMatrix(b, chol)


def phi_log_target(spec, state, data, phi: float, M: np.ndarray | None = None) -> float:
    """Full-conditional log density of ``phi`` up to a constant."""
    if phi <= 0:
        return -math.inf
    if M is None:
        M = spatial_scatter(residuals(spec, state.betas, as_completed(data)), state.Sigma)
    val, _ = _spatial_loglik(pairwise_distances(state.D), phi, M, state.V, spec.T * spec.q)
    return -spec.priors.phi_rate * phi + val


def metropolis_accept(log_ratio: float, rng: RandomStream) -> bool:
    return bool(log_ratio >= 0 or math.log(rng.uniform()) < log_ratio)


def _mh_phi(spec, state, M, dist, rng, tuning: MhTuning, current=None, step=None):
    step = tuning.log_step if step is None else step
    rate, Tq = spec.priors.phi_rate, spec.T * spec.q
    if current is None:
        val, Bcur = _spatial_loglik(dist, state.phi, M, state.V, Tq)
        current = (-rate * state.phi + val, Bcur)
    eps = rng.standard_normal()
    prop = state.phi * math.exp(step * eps)
    try:
        val, Bprop = _spatial_loglik(dist, prop, M, state.V, Tq)
        target = -rate * prop + val
        # log-scale random walk: Jacobian log(prop) - log(phi)
        log_ratio = target - current[0] + math.log(prop) - math.log(state.phi)
        ok = np.isfinite(log_ratio) and metropolis_accept(log_ratio, rng)
    except (FactorizationError, FloatingPointError, ValueError, OverflowError):
        ok = False
    tuning.record(ok)
    if ok:
        return prop, Bprop
    return state.phi, current[1]


def mh_phi(spec, state, data, rng: RandomStream, tuning: MhTuning) -> float:
    E = residuals(spec, state.betas, as_completed(data))
    M = spatial_scatter(E, state.Sigma)
    phi, _ = _mh_phi(spec, state, M, pairwise_distances(state.D), rng, tuning)
    return phi


# --------------------------------------------------------------------------- deformation


class _DeformTarget:
    """Log full conditional of D, updated one coordinate at a time.

    The prior quadratic form is tracked incrementally through ``Rd^{-1} (D - S)^T``.
    """

    def __init__(self, spec, state, M):
        dp = spec.deform_prior
        self.rinv, self.s2 = dp.Rd_inv, dp.sigma2d
        self.S = spec.S
        self.D = state.D.copy()
        self.phi, self.V = state.phi, state.V
        self.M = M
        self.Tq = spec.T * spec.q
        self.dist = pairwise_distances(self.D)
        self.ru = (self.D - self.S) @ self.rinv  # row r holds Rd^{-1} u_r
        u = self.D - self.S
        self.prior = -0.5 * float(np.sum(self.ru * u / self.s2[:, None]))

    def _prior_delta(self, r, n, x):
        delta = x - self.D[r, n]
        return -0.5 * (2.0 * delta * self.ru[r, n] + delta * delta * self.rinv[n, n]) / self.s2[r]

    def evaluate(self, r: int, n: int, x: float):
        """Target with ``D[r, n] = x``; returns (value, (B, chol), distance row)."""
        d = self.D
        other = 1 - r
        row = np.sqrt((x - d[r]) ** 2 + (d[other, n] - d[other]) ** 2)
        row[n] = 0.0
        dist = self.dist.copy()
        dist[n, :] = row
        dist[:, n] = row
        lik, b, chol = _spatial_terms(dist, self.phi, self.M, self.V, self.Tq)
        return self.prior + self._prior_delta(r, n, x) + lik, (b, chol), row

    def full(self):
        lik, B = _spatial_loglik(self.dist, self.phi, self.M, self.V, self.Tq)
        return self.prior + lik, B

    def commit(self, r, n, x, row):
        self.prior += self._prior_delta(r, n, x)
        self.ru[r] += (x - self.D[r, n]) * self.rinv[n]
        self.D[r, n] = x
        self.dist[n, :] = row
        self.dist[:, n] = row


def _safe_eval(target, r, n, x):
    try:
        return target.evaluate(r, n, x)
    except (FactorizationError, FloatingPointError):
        return -math.inf, None, None


def slice_coordinate(target: _DeformTarget, r: int, n: int, current: float, width: float,
                     rng: RandomStream, tuning: SliceTuning):
    """Stepping-out and shrinkage slice update of ``D[r, n]``.

    Returns ``(new_value, new_log_target, B, row)``; ``B``/``row`` are ``None``
    when the coordinate is left unchanged.
    """
    x0 = target.D[r, n]
    level = current - rng.exponential()
    left = x0 - width * rng.uniform()
    right = left + width
    # each side gets its own budget; running out means the slice is not bracketed
    for sign in (-1.0, 1.0):
        steps = 0
        while _safe_eval(target, r, n, left if sign < 0 else right)[0] > level:
            if steps >= tuning.max_step_outs:
                tuning.n_exhausted += 1
                logger.warning("slice step-out limit reached for D[%d, %d]; keeping current value", r, n)
                return x0, current, None, None
            if sign < 0:
                left -= width
            else:
                right += width
            steps += 1
    for _ in range(tuning.max_shrinks):
        x1 = left + rng.uniform() * (right - left)
        val, B, row = _safe_eval(target, r, n, x1)
        if val > level:
            return x1, val, B, row
        if x1 < x0:
            left = x1
        else:
            right = x1
    logger.warning("slice shrinkage did not terminate for D[%d, %d]; keeping current value", r, n)
    return x0, current, None, None


def _slice_D(spec, state, M, rng, tuning: SliceTuning):
    target = _DeformTarget(spec, state, M)
    widths = np.sqrt(spec.deform_prior.sigma2d) if tuning.initial_width is None else np.asarray(
        tuning.initial_width, float) * np.ones(2)
    anchors = set(spec.sites.anchors)
    current, B = target.full()
    for n in range(spec.N):
        if n in anchors:
            continue
        for r in range(2):
            x, val, Bn, row = slice_coordinate(target, r, n, current, widths[r], rng, tuning)
            if row is not None:
                target.commit(r, n, x, row)
                current, B = val, PosDefMatrix(*Bn)
    return target.D, B


def slice_D(spec, state, data, rng: RandomStream, tuning: SliceTuning) -> np.ndarray:
    """One pass of univariate slice updates over all non-anchor coordinates."""
    if not spec.variant.deforms:
        raise ValueError(f"variant {spec.variant.value} does not deform")
    M = spatial_scatter(residuals(spec, state.betas, as_completed(data)), state.Sigma)
    D, _ = _slice_D(spec, state, M, rng, tuning)
    return D


def D_log_target(spec, state, data, D: np.ndarray) -> float:
    """Full-conditional log density of D up to a constant."""
    M = spatial_scatter(residuals(spec, state.betas, as_completed(data)), state.Sigma)
    val, _ = _spatial_loglik(pairwise_distances(D), state.phi, M, state.V, spec.T * spec.q)
    return spec.deform_prior.log_density(D, spec.S) + val


# --------------------------------------------------------------------------- hybrid step


def _hybrid_step(spec, state, Y, rng, tunings: Tunings, B=None):
    new = state.copy()
    if B is None:
        B = build_B(new.D, new.phi)
    new.betas = ffbs_backward(spec, ffbs_filter(spec, Y, B), new.V, new.Sigma, rng)
    E = residuals(spec, new.betas, Y)
    M = spatial_scatter(E, new.Sigma)
    new.phi, B = _mh_phi(spec, new, M, pairwise_distances(new.D), rng, tunings.mh)
    if spec.variant.deforms:
        new.D, B = _slice_D(spec, new, M, rng, tunings.slice)
    elif not np.array_equal(new.D, spec.S):
        new.D = spec.S.copy()
        B = build_B(new.D, new.phi)
    new.V = gibbs_V(spec, new, Y, rng, B)
    if spec.variant.full_sigma:
        new.Sigma = gibbs_Sigma_full(spec, new, Y, rng, B)
    else:
        new.Sigma = gibbs_Sigma_diag(spec, new, Y, rng, B)
    return new, B


def hybrid_step(spec, state, data, rng: RandomStream, tunings: Tunings | None = None) -> ParameterState:
    new, _ = _hybrid_step(spec, state, as_completed(data), rng, tunings or Tunings())
    return new


def run_chain(spec: ModelSpec, data, config: ChainConfig, tunings: Tunings | None = None, *,
              impute=None, state0: ParameterState | None = None, record_trace: bool = True,
              progress=None) -> PosteriorSample:
    """Hybrid MCMC over ``config.iterations`` sweeps, keeping every ``thin``-th post-burn-in draw.

    ``impute(spec, state, data, rng)`` must return a ``CompletedData``; it is
    required when ``data`` has missing cells and runs before every sweep.
    """
    tunings = tunings or Tunings()
    root = random_stream(config.seed)
    imp_rng, step_rng = root.spawn(2)
    if isinstance(data, ObservedDataset):
        state = init_state(spec, data) if state0 is None else state0.copy()
        if data.n_missing and impute is None:
            raise ValueError("dataset has missing entries; use run_da_chain")
    else:
        if state0 is None:
            raise ValueError("state0 is required when data is not an ObservedDataset")
        state = state0.copy()
    has_missing = isinstance(data, ObservedDataset) and data.n_missing > 0
    Y = as_completed(data) if not has_missing else None

    keep = config.retained_indices()
    K, T, p, q, N = config.K, spec.T, spec.p, spec.q, spec.N
    out_betas = np.empty((K, T + 1, p, q))
    out_V = np.empty(K)
    out_Sigma = np.empty((K, q, q))
    out_phi = np.empty(K)
    out_D = np.empty((K, 2, N))
    out_imp = np.empty((K, data.n_missing)) if has_missing else None
    trace = np.empty((config.iterations, 3)) if record_trace else None
    B = None
    slot = 0
    for it in range(1, config.iterations + 1):
        if has_missing:
            completed = impute(spec, state, data, imp_rng)
            Y = completed.filled
            state.imputed = completed.imputed_values()
        state, B = _hybrid_step(spec, state, Y, step_rng, tunings, B)
        if has_missing:
            state.imputed = completed.imputed_values()
        if it <= config.burn_in:
            tunings.mh.adapt()
        if record_trace:
            trace[it - 1] = (it, logpost(spec, state, Y, B), float(tunings.mh.last_accepted))
        if slot < K and it == keep[slot]:
            out_betas[slot] = state.betas
            out_V[slot] = state.V
            out_Sigma[slot] = state.Sigma
            out_phi[slot] = state.phi
            out_D[slot] = state.D
            if has_missing:
                out_imp[slot] = state.imputed
            slot += 1
        if progress is not None:
            progress(it, state)
    return PosteriorSample(
        indices=keep, betas=out_betas, V=out_V, Sigma=out_Sigma, phi=out_phi, D=out_D,
        imputed=out_imp, thin=config.thin, burn_in=config.burn_in,
        phi_accept_rate=tunings.mh.acceptance_rate, trace=trace,
    )
