"""Model comparison scores and chain diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CompletedData, ObservedDataset
from .model import ModelSpec, ParameterState, loglik
from .samplers import PosteriorSample

ALPHA_DEFAULT = 0.05


@dataclass(frozen=True)
class IntervalSummary:
    lower: float
    upper: float
    mean: float
    level: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


# --------------------------------------------------------------------------- DIC


def _completed(data: ObservedDataset, posterior: PosteriorSample, k: int) -> np.ndarray:
    imputed = None if posterior.imputed is None else posterior.imputed[k]
    return CompletedData.from_dataset(data, imputed).filled


def posterior_mean_state(posterior: PosteriorSample) -> ParameterState:
    """Element-wise posterior means, with ``V Sigma`` averaged jointly and ``V`` set to 1."""
    vsig = np.mean(posterior.V[:, None, None] * posterior.Sigma, axis=0)
    return ParameterState(
        betas=posterior.betas.mean(axis=0), V=1.0, Sigma=0.5 * (vsig + vsig.T),
        phi=float(posterior.phi.mean()), D=posterior.D.mean(axis=0),
    )


def deviance_components(spec: ModelSpec, data: ObservedDataset, posterior: PosteriorSample):
    """Per-draw deviances and deviances at the posterior mean on each draw's completed data."""
    if posterior.K == 0:
        raise ValueError("posterior sample is empty")
    bar = posterior_mean_state(posterior)
    dev = np.empty(posterior.K)
    dev_bar = np.empty(posterior.K)
    for k in range(posterior.K):
        y = _completed(data, posterior, k)
        dev[k] = -2.0 * loglik(spec, posterior.state(k), y)
        dev_bar[k] = -2.0 * loglik(spec, bar, y)
        if not np.isfinite(dev[k]):
            raise FloatingPointError(f"non-finite deviance at retained draw {k} (iteration {posterior.indices[k]})")
    if not np.all(np.isfinite(dev_bar)):
        raise FloatingPointError("non-finite deviance at the posterior mean")
    return dev, dev_bar


def compute_dic(spec: ModelSpec, data: ObservedDataset, posterior: PosteriorSample) -> float:
    """``Dbar + pD`` with ``pD = Dbar - D(theta_bar)`` on completed data."""
    dev, dev_bar = deviance_components(spec, data, posterior)
    dbar = float(dev.mean())
    p_d = dbar - float(dev_bar.mean())
    return dbar + p_d


# --------------------------------------------------------------------------- predictive scores


def interval_score(truth, lower, upper, alpha: float = ALPHA_DEFAULT):
    """Width plus ``2/alpha`` times the distance by which ``truth`` misses the interval."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    truth, lower, upper = np.broadcast_arrays(*(np.asarray(v, float) for v in (truth, lower, upper)))
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    score = (upper - lower) + (2.0 / alpha) * (np.maximum(lower - truth, 0) + np.maximum(truth - upper, 0))
    return float(score) if score.ndim == 0 else score


def _draws(predictive) -> np.ndarray:
    return np.asarray(getattr(predictive, "Ystar", predictive), float)


def _weights(truth: np.ndarray, observed) -> np.ndarray:
    if observed is None:
        return ~np.isnan(truth)
    observed = np.asarray(observed)
    if not np.all(np.isin(observed, (0, 1))):
        raise ValueError("inclusion indicators must be 0 or 1")
    return observed.astype(bool)


def aggregate_is(predictive, truth, alpha: float = ALPHA_DEFAULT, observed=None) -> np.ndarray:
    """Per (site, variable) time-averaged interval score over cells with ``O = 1``.

    ``predictive`` holds draws shaped ``K x T x N* x q``; ``truth`` is
    ``T x N* x q``.  Cells with no included time point are returned as NaN.
    """
    draws = _draws(predictive)
    truth = np.asarray(truth, float)
    o = _weights(truth, observed)
    lo, hi = np.quantile(draws, [alpha / 2, 1 - alpha / 2], axis=0)
    safe_truth = np.where(o, truth, lo)
    scores = interval_score(safe_truth, lo, hi, alpha)
    num = np.sum(np.where(o, scores, 0.0), axis=0)
    den = o.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def compute_pmse(predictive, truth, observed=None) -> float:
    """O-weighted mean squared error of the posterior predictive mean."""
    draws = _draws(predictive)
    truth = np.asarray(truth, float)
    o = _weights(truth, observed)
    if not o.any():
        raise ValueError("no held-out cells are marked as observed")
    err = draws.mean(axis=0) - truth
    return float(np.sum(err[o] ** 2) / o.sum())


# --------------------------------------------------------------------------- diagnostics


def spectral_density_zero(x: np.ndarray, window_frac: float = 0.04) -> float:
    """Bartlett-window estimate of the spectral density at frequency zero."""
    x = np.asarray(x, float)
    n = len(x)
    lag = max(1, int(math.floor(window_frac * n)))
    c = x - x.mean()
    acov = np.array([np.dot(c[: n - h], c[h:]) / n for h in range(lag + 1)])
    w = 1.0 - np.arange(1, lag + 1) / (lag + 1)
    return float(acov[0] + 2.0 * np.dot(w, acov[1:]))


def geweke_statistic(chain, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Z-score comparing the means of the first ``frac_a`` and last ``frac_b`` of a chain.

    Returns NaN for a chain with no variation.
    """
    x = np.asarray(chain, float)
    n = len(x)
    if n < 100:
        raise ValueError("chain must have at least 100 draws")
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise ValueError("invalid segment fractions")
    a = x[: int(math.floor(frac_a * n))]
    b = x[n - int(math.floor(frac_b * n)):]
    var = spectral_density_zero(a) / len(a) + spectral_density_zero(b) / len(b)
    if not var > 0:
        return float("nan")
    return float((a.mean() - b.mean()) / math.sqrt(var))


def hpd_interval(chain, level: float = 0.95) -> IntervalSummary:
    """Shortest window holding ``ceil(level * K)`` of the sorted draws."""
    x = np.sort(np.asarray(chain, float))
    n = len(x)
    if n == 0 or not 0 < level <= 1:
        raise ValueError("need a non-empty chain and level in (0, 1]")
    m = min(n, int(math.ceil(level * n)))
    widths = x[m - 1:] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return IntervalSummary(float(x[i]), float(x[i + m - 1]), float(x.mean()), level)


def parameter_chains(posterior: PosteriorSample) -> dict[str, np.ndarray]:
    """Scalar chains for reporting: ``phi`` and every ``V Sigma[i, j]`` with ``i <= j`` (1-based names)."""
    out = {"phi": posterior.phi}
    q = posterior.Sigma.shape[1]
    for i in range(q):
        for j in range(i, q):
            out[f"VSigma_{i + 1}_{j + 1}"] = posterior.VSigma(i, j)
    return out
