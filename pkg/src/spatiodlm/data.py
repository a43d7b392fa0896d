"""Observed responses, missing-value layouts and completed datasets.

Responses are held as ``T x N x q`` arrays with ``NaN`` marking missing
cells.  Per-time vectorization is column stacking, so cell ``(n, i)`` sits
at position ``i * N + n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .spatial import SiteSet


class TimeClass(str, Enum):
    COMPLETE = "complete"
    PARTIAL = "partial"
    MISSING = "missing"


@dataclass(frozen=True)
class MissingLayout:
    """Permutation putting observed entries of ``vec(Y_t)`` first."""

    permutation: np.ndarray
    n_obs: int
    n_mis: int

    @property
    def kind(self) -> TimeClass:
        if self.n_mis == 0:
            return TimeClass.COMPLETE
        if self.n_obs == 0:
            return TimeClass.MISSING
        return TimeClass.PARTIAL

    @property
    def obs_idx(self) -> np.ndarray:
        return self.permutation[: self.n_obs]

    @property
    def mis_idx(self) -> np.ndarray:
        return self.permutation[self.n_obs:]

    def permutation_matrix(self) -> np.ndarray:
        size = len(self.permutation)
        p = np.zeros((size, size))
        p[np.arange(size), self.permutation] = 1.0
        return p


def build_layout(mask_row) -> MissingLayout:
    """Stable layout from a boolean ``observed`` vector in vec order."""
    mask_row = np.asarray(mask_row, dtype=bool)
    obs = np.flatnonzero(mask_row)
    mis = np.flatnonzero(~mask_row)
    return MissingLayout(np.concatenate([obs, mis]), len(obs), len(mis))


def vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat).ravel(order="F")


def unvec(v: np.ndarray, n: int, q: int) -> np.ndarray:
    return np.reshape(v, (q, n)).T


@dataclass(frozen=True)
class ObservedDataset:
    sites: SiteSet
    responses: np.ndarray  # T x N x q, NaN where missing
    layouts: tuple = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float)
        if y.ndim != 3:
            raise ValueError(f"responses must be T x N x q, got shape {y.shape}")
        if y.shape[1] != self.sites.count:
            raise ValueError(f"{y.shape[1]} response rows but {self.sites.count} sites")
        object.__setattr__(self, "responses", y)
        object.__setattr__(
            self, "layouts", tuple(build_layout(vec(~np.isnan(y[t]))) for t in range(y.shape[0]))
        )

    @property
    def T(self) -> int:
        return self.responses.shape[0]

    @property
    def N(self) -> int:
        return self.responses.shape[1]

    @property
    def q(self) -> int:
        return self.responses.shape[2]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.responses)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.responses).sum())

    def missing_fractions(self) -> np.ndarray:
        """Fraction of missing cells per response variable."""
        return np.isnan(self.responses).mean(axis=(0, 1))

    def missing_positions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(t, n, i)`` of every missing cell, ordered by time then vec index."""
        t, i, n = np.nonzero(np.isnan(self.responses).transpose(0, 2, 1))
        return t, n, i


@dataclass
class CompletedData:
    """Responses with every cell filled; ``observed`` records provenance."""

    filled: np.ndarray  # T x N x q
    observed: np.ndarray  # bool, T x N x q

    @classmethod
    def from_dataset(cls, data: ObservedDataset, imputed: np.ndarray | None = None) -> "CompletedData":
        filled = data.responses.copy()
        if data.n_missing:
            if imputed is None:
                raise ValueError("dataset has missing entries and no imputations were supplied")
            t, n, i = data.missing_positions()
            filled[t, n, i] = imputed
        return cls(filled, data.observed)

    def imputed_values(self) -> np.ndarray:
        """Missing-cell values ordered by time then vec index."""
        t, i, n = np.nonzero(~self.observed.transpose(0, 2, 1))
        return self.filled[t, n, i]


def as_completed(data) -> np.ndarray:
    """Fully-filled ``T x N x q`` array from any supported data container."""
    if isinstance(data, CompletedData):
        return data.filled
    if isinstance(data, ObservedDataset):
        if data.n_missing:
            raise ValueError("incomplete data: impute missing responses first")
        return data.responses
    arr = np.asarray(data, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("incomplete data: impute missing responses first")
    return arr
