"""Sites, deformations and the two spatial kernels.

Coordinates are stored as ``2 x N`` arrays (row 0 longitude, row 1
latitude) and distances are planar Euclidean.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .distributions import PosDefMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SiteSet:
    coords: np.ndarray
    anchors: tuple[int, int] = (0, 1)
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[0] != 2:
            raise ValueError(f"coords must be 2 x N, got {coords.shape}")
        object.__setattr__(self, "coords", coords)
        n = coords.shape[1]
        a, b = self.anchors
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"invalid anchor indices {self.anchors} for {n} sites")
        dup = duplicate_pair(coords)
        if dup is not None:
            raise ValueError(f"sites {dup[0]} and {dup[1]} share identical coordinates")
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(str(i + 1) for i in range(n)))
        elif len(self.ids) != n:
            raise ValueError("ids length does not match number of sites")

    @property
    def count(self) -> int:
        return self.coords.shape[1]


def duplicate_pair(coords: np.ndarray):
    d = pairwise_distances(coords)
    iu = np.triu_indices(coords.shape[1], 1)
    hits = np.nonzero(d[iu] == 0.0)[0]
    if len(hits):
        return int(iu[0][hits[0]]), int(iu[1][hits[0]])
    return None


def pairwise_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Euclidean distances between the columns of two ``2 x *`` arrays."""
    b = a if b is None else b
    diff = a[:, :, None] - b[:, None, :]
    return np.sqrt(np.einsum("kij,kij->ij", diff, diff))


def median_distance(coords: np.ndarray) -> float:
    """Median Euclidean distance over all pairs of sites."""
    n = coords.shape[1]
    iu = np.triu_indices(n, 1)
    return float(np.median(pairwise_distances(coords)[iu]))


def exponential_kernel(dist: np.ndarray, phi: float) -> np.ndarray:
    return np.exp(-phi * dist)


def build_B(deform: np.ndarray, phi: float) -> PosDefMatrix:
    """Exponential correlation ``exp(-phi |d_n - d_m|)`` in deformed space."""
    if not phi > 0:
        raise ValueError("phi must be positive")
    return PosDefMatrix(exponential_kernel(pairwise_distances(deform), phi))


def build_cross_B(deform_a: np.ndarray, deform_b: np.ndarray, phi: float) -> np.ndarray:
    return exponential_kernel(pairwise_distances(deform_a, deform_b), phi)


def gaussian_kernel(a: np.ndarray, b: np.ndarray, psi: float) -> np.ndarray:
    d = pairwise_distances(a, b)
    return np.exp(-psi * d * d)


def build_Rd(sites, psi: float) -> PosDefMatrix:
    """Gaussian prior correlation ``exp(-psi |s_n - s_m|^2)`` in geographic space."""
    if not psi > 0:
        raise ValueError("psi must be positive")
    s = sites.coords if isinstance(sites, SiteSet) else np.asarray(sites, float)
    return PosDefMatrix(gaussian_kernel(s, s, psi))


def apply_linear_deformation(sites: SiteSet, Lambda: np.ndarray) -> np.ndarray:
    """``d(s) = Lambda s`` for every site except the two anchors, which stay put."""
    Lambda = np.asarray(Lambda, float)
    if abs(np.linalg.det(Lambda)) < 1e-12:
        raise ValueError("Lambda must be invertible")
    d = Lambda @ sites.coords
    a, b = sites.anchors
    d[:, [a, b]] = sites.coords[:, [a, b]]
    return d


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def deformation_frobenius_gap(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Squared Frobenius distance ``tr[(D - D_hat)(D - D_hat)^T]``."""
    truth, estimate = np.asarray(truth, float), np.asarray(estimate, float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    diff = truth - estimate
    return float(np.trace(diff @ diff.T))


@dataclass(frozen=True)
class DeformPrior:
    """Matrix-normal prior ``D ~ MN(S, sigma2d, Rd)`` on the deformation."""

    sigma2d: np.ndarray  # diagonal entries (lon, lat)
    tau: float
    psi: float
    Rd: PosDefMatrix
    Rd_inv: np.ndarray = field(repr=False)

    @classmethod
    def from_sites(cls, sites: SiteSet, tau: float = 1.0, psi: float = 10.0) -> "DeformPrior":
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        var = np.var(sites.coords, axis=1, ddof=1)
        rd = build_Rd(sites, psi)
        return cls(sigma2d=tau * var, tau=tau, psi=psi, Rd=rd, Rd_inv=rd.inv())

    def with_sigma2d(self, sigma2d) -> "DeformPrior":
        return DeformPrior(np.asarray(sigma2d, float), self.tau, self.psi, self.Rd, self.Rd_inv)

    def log_density(self, deform: np.ndarray, coords: np.ndarray) -> float:
        """Unnormalized log prior: ``-tr[(D-S)^T sigma^-2 (D-S) Rd^{-1}] / 2``."""
        u = deform - coords
        return -0.5 * float(np.sum((u @ self.Rd_inv) * u / self.sigma2d[:, None]))
