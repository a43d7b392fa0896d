"""Positive-definite linear algebra, random streams and the distribution
families used by the sampler.

Conventions
-----------
* ``vec`` is column stacking, so an ``r x c`` matrix ``X`` maps to
  ``X.ravel(order="F")``.
* A matrix-normal ``MN(M, U, C)`` with row covariance ``U`` (r x r) and
  column covariance ``C`` (c x c) has ``vec(X) ~ N(vec(M), C kron U)``.
* Inverse-gamma uses shape/scale, density ``x^{-a-1} exp(-b/x)``.
* Inverse-Wishart uses the standard ``(dof, Psi)`` form with density
  proportional to ``|X|^{-(dof+q+1)/2} exp(-tr(Psi X^{-1})/2)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.special import gammaln, multigammaln

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
_LOG_MAX = math.log(np.finfo(float).max)
_LOG_TINY = math.log(np.finfo(float).tiny)

RandomStream = np.random.Generator


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after diagonal jitter."""


def random_stream(seed) -> RandomStream:
    """Counter-based (Philox) generator; use ``.spawn(n)`` for independent substreams."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def cholesky_jitter(a: np.ndarray, retries: int = 3) -> np.ndarray:
    """Lower Cholesky factor of ``a``.

    On failure the diagonal is inflated by ``1e-10 * trace/dim``, escalating
    tenfold on each of ``retries`` further attempts.
    """
    a = np.asarray(a, dtype=float)
    try:
        return sla.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    dim = a.shape[0]
    base = abs(np.trace(a)) / dim if dim else 1.0
    if not np.isfinite(base) or base == 0.0:
        base = 1.0
    eps = 1e-10 * base
    for _ in range(retries):
        try:
            out = sla.cholesky(a + eps * np.eye(dim), lower=True, check_finite=False)
            logger.warning("cholesky needed jitter %.3g on a %dx%d matrix", eps, dim, dim)
            return out
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise FactorizationError(f"matrix of dimension {dim} is not positive definite after jitter")


@dataclass(frozen=True)
class PosDefMatrix:
    """Symmetric positive-definite matrix with a cached lower Cholesky factor."""

    values: np.ndarray
    chol: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[0] != vals.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {vals.shape}")
        scale = max(np.max(np.abs(vals)), 1e-300) if vals.size else 1.0
        if np.max(np.abs(vals - vals.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("matrix is not symmetric")
        object.__setattr__(self, "values", vals)
        if self.chol is None:
            object.__setattr__(self, "chol", cholesky_jitter(vals))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.chol, True), b, check_finite=False)

    def inv(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))

    def whiten(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b`` for the lower factor ``L``."""
        return sla.solve_triangular(self.chol, b, lower=True, check_finite=False)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def as_posdef(a) -> PosDefMatrix:
    return a if isinstance(a, PosDefMatrix) else PosDefMatrix(np.atleast_2d(np.asarray(a, float)))


@dataclass(frozen=True)
class MatrixNormalParams:
    mean: np.ndarray
    row_cov: PosDefMatrix
    col_cov: PosDefMatrix

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_2d(np.asarray(self.mean, float)))
        object.__setattr__(self, "row_cov", as_posdef(self.row_cov))
        object.__setattr__(self, "col_cov", as_posdef(self.col_cov))
        r, c = self.mean.shape
        if self.row_cov.dim != r or self.col_cov.dim != c:
            raise ValueError("covariance dimensions do not match the mean")


@dataclass(frozen=True)
class InverseGammaParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("inverse-gamma shape and scale must be positive")


@dataclass(frozen=True)
class InverseWishartParams:
    dof: float
    scale_matrix: PosDefMatrix

    def __post_init__(self):
        object.__setattr__(self, "scale_matrix", as_posdef(self.scale_matrix))
        if not self.dof > self.scale_matrix.dim - 1:
            raise ValueError(f"dof={self.dof} must exceed dim-1={self.scale_matrix.dim - 1}")


# --------------------------------------------------------------------------- sampling


def sample_matrix_normal(params: MatrixNormalParams, rng: RandomStream, size=None) -> np.ndarray:
    """Draw ``mean + L_row Z L_col^T``; ``size`` prepends batch dimensions."""
    r, c = params.mean.shape
    shape = (r, c) if size is None else tuple(np.atleast_1d(size)) + (r, c)
    z = rng.standard_normal(shape)
    return params.mean + params.row_cov.chol @ z @ params.col_cov.chol.T


def sample_inverse_gamma(params: InverseGammaParams, rng: RandomStream, size=None):
    """Inverse-gamma draw computed in log space.

    Tiny shapes (e.g. 0.001) put most of their mass beyond the float range;
    such draws are clamped to the largest finite double.
    """
    a, b = params.shape, params.scale
    if a < 1.0:
        # G_a = G_{a+1} * U^{1/a}
        log_g = np.log(rng.standard_gamma(a + 1.0, size)) + np.log(rng.uniform(size=size)) / a
    else:
        log_g = np.log(rng.standard_gamma(a, size))
    log_x = np.clip(math.log(b) - log_g, _LOG_TINY, _LOG_MAX)
    out = np.exp(log_x)
    return float(out) if size is None else out


def _wishart_factor(dof: float, q: int, rng: RandomStream) -> np.ndarray:
    # Bartlett decomposition: lower triangular A with W = L A A^T L^T
    a = np.zeros((q, q))
    a[np.diag_indices(q)] = np.sqrt(rng.chisquare(dof - np.arange(q)))
    low = np.tril_indices(q, -1)
    a[low] = rng.standard_normal(len(low[0]))
    return a


def sample_inverse_wishart(params: InverseWishartParams, rng: RandomStream) -> np.ndarray:
    """Draw ``X ~ IW(dof, Psi)`` as the inverse of a ``Wishart(dof, Psi^{-1})`` draw."""
    q = params.scale_matrix.dim
    low = params.scale_matrix.chol  # Psi = L L^T
    a = _wishart_factor(params.dof, q, rng)
    # W = L^{-T} A A^T L^{-1} ~ Wishart(dof, Psi^{-1}), so X = W^{-1} = m^T m with m = A^{-1} L^T
    m = sla.solve_triangular(a, low.T, lower=True, check_finite=False)
    x = m.T @ m
    return 0.5 * (x + x.T)


def sample_mvn(mean: np.ndarray, cov, rng: RandomStream) -> np.ndarray:
    chol = cov.chol if isinstance(cov, PosDefMatrix) else cholesky_jitter(cov)
    return mean + chol @ rng.standard_normal(len(mean))


# --------------------------------------------------------------------------- densities


def kron_matvec(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``(A kron B) x`` via ``vec(B X A^T)`` without forming the product."""
    xm = np.reshape(x, (a.shape[1], b.shape[1])).T
    return (b @ xm @ a.T).ravel(order="F")


def logpdf_mvn_kron(y, mean, col_cov, row_cov, scale: float = 1.0) -> float:
    """Log-density of ``N(mean, scale * (col_cov kron row_cov))`` at ``y``.

    ``y`` is the column-stacked vectorization of an ``N x q`` matrix where
    ``row_cov`` is ``N x N`` and ``col_cov`` is ``q x q``.
    """
    col_cov, row_cov = as_posdef(col_cov), as_posdef(row_cov)
    q, n = col_cov.dim, row_cov.dim
    y = np.asarray(y, float)
    if y.size != n * q or np.size(mean) != n * q:
        raise ValueError(f"expected vectors of length {n * q}, got {y.size} and {np.size(mean)}")
    resid = np.reshape(y - np.asarray(mean, float), (q, n)).T
    z = row_cov.whiten(resid)  # L_B^{-1} E
    zz = sla.solve_triangular(col_cov.chol, z.T, lower=True, check_finite=False)
    quad = float(np.sum(zz * zz)) / scale
    logdet = n * col_cov.logdet() + q * row_cov.logdet() + n * q * math.log(scale)
    return -0.5 * (n * q * LOG_2PI + logdet + quad)


def logpdf_matrix_normal(x, mean, row_cov, col_cov) -> float:
    x = np.atleast_2d(np.asarray(x, float))
    return logpdf_mvn_kron(x.ravel(order="F"), np.atleast_2d(mean).ravel(order="F"), col_cov, row_cov)


def logpdf_inverse_gamma(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * math.log(x) - scale / x


def logpdf_inverse_wishart(x, dof: float, scale_matrix) -> float:
    x = as_posdef(x)
    psi = as_posdef(scale_matrix)
    q = x.dim
    tr = float(np.trace(x.solve(psi.values)))
    return (
        0.5 * dof * psi.logdet()
        - 0.5 * dof * q * math.log(2.0)
        - multigammaln(0.5 * dof, q)
        - 0.5 * (dof + q + 1.0) * x.logdet()
        - 0.5 * tr
    )


def logpdf_gamma(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x
